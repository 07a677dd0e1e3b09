"""Tagged binary envelope shared by crypto material and committee messages.

Every value is ``tag (1 byte) | length (2 bytes, big-endian) | payload``.
Integers are big-endian unsigned with the minimal number of bytes (zero is
one ``0x00`` byte). A record is a tagged envelope whose payload is the
concatenation of its field envelopes. See docs/FORMATS.md for the tag table.
"""

from __future__ import annotations

import struct
from enum import IntEnum

MAX_PAYLOAD = 0xFFFF


class Tag(IntEnum):
    UINT = 0x01
    BYTES = 0x02
    TEXT = 0x03
    LIST = 0x04
    FLOAT = 0x05
    BOOL = 0x06
    NONE = 0x07

    GROUP_KEY = 0x10
    KEY_SHARE = 0x11
    PARTIAL_SIG = 0x12
    GROUP_SIG = 0x13

    VOTE_REQUEST = 0x20
    VOTE_RESPONSE = 0x21
    APPEND_ENTRIES = 0x22
    APPEND_RESPONSE = 0x23
    FRAGMENT_SUBMIT = 0x24
    LOG_ENTRY = 0x25
    PACKAGE_BODY = 0x26
    PACKAGE = 0x27


class EnvelopeError(ValueError):
    pass


def pack(tag, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise EnvelopeError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return bytes((int(tag),)) + len(payload).to_bytes(2, "big") + payload


def unpack(data: bytes) -> tuple[int, bytes, bytes]:
    """Split one envelope off the front of ``data``: ``(tag, payload, rest)``."""
    if len(data) < 3:
        raise EnvelopeError("truncated envelope header")
    size = int.from_bytes(data[1:3], "big")
    if len(data) < 3 + size:
        raise EnvelopeError("truncated envelope payload")
    return data[0], bytes(data[3 : 3 + size]), bytes(data[3 + size :])


def uint_bytes(value: int) -> bytes:
    if value < 0:
        raise EnvelopeError(f"cannot encode negative integer {value}")
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def pack_value(value) -> bytes:
    # bool first: it is an int subclass
    if value is None:
        return pack(Tag.NONE, b"")
    if isinstance(value, bool):
        return pack(Tag.BOOL, b"\x01" if value else b"\x00")
    if isinstance(value, int):
        return pack(Tag.UINT, uint_bytes(value))
    if isinstance(value, float):
        return pack(Tag.FLOAT, struct.pack(">d", value))
    if isinstance(value, (bytes, bytearray)):
        return pack(Tag.BYTES, bytes(value))
    if isinstance(value, str):
        return pack(Tag.TEXT, value.encode("utf-8"))
    if isinstance(value, (list, tuple)):
        return pack(Tag.LIST, b"".join(pack_value(v) for v in value))
    raise EnvelopeError(f"cannot encode {type(value).__name__}")


def _decode_scalar(tag, payload):
    if tag == Tag.NONE:
        return None
    if tag == Tag.BOOL:
        return payload == b"\x01"
    if tag == Tag.UINT:
        return int.from_bytes(payload, "big")
    if tag == Tag.FLOAT:
        return struct.unpack(">d", payload)[0]
    if tag == Tag.BYTES:
        return payload
    if tag == Tag.TEXT:
        return payload.decode("utf-8")
    if tag == Tag.LIST:
        return unpack_fields(payload)
    raise EnvelopeError(f"unexpected tag 0x{tag:02x} inside a record")


def unpack_fields(payload: bytes) -> list:
    out = []
    while payload:
        tag, body, payload = unpack(payload)
        out.append(_decode_scalar(tag, body))
    return out


def unpack_value(data: bytes):
    tag, payload, rest = unpack(data)
    if rest:
        raise EnvelopeError("trailing bytes after value")
    return _decode_scalar(tag, payload)


def pack_record(tag, *fields) -> bytes:
    return pack(tag, b"".join(pack_value(f) for f in fields))


def unpack_record(data: bytes, expected=None) -> tuple[int, list]:
    tag, payload, rest = unpack(data)
    if rest:
        raise EnvelopeError("trailing bytes after record")
    if expected is not None and tag != expected:
        raise EnvelopeError(f"expected tag 0x{int(expected):02x}, got 0x{tag:02x}")
    return tag, unpack_fields(payload)
