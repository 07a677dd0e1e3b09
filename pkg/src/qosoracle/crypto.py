"""Per-task (t, n) threshold signatures over a prime-order subgroup.

A signature is the scalar ``sigma = sk * H(msg) mod q`` and verification
happens in the exponent: ``g**sigma == pk**H(msg) (mod p)``. Shares come
from a degree ``t - 1`` polynomial dealt deterministically from a seed, and
``t`` partials combine by Lagrange interpolation at zero.

One signature leaks the signing secret (``sk = sigma / H(msg)``). Keys are
therefore single-use: a :class:`SigningSession` refuses a second
aggregation, and each task gets a fresh dealing.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping

from . import wire

try:
    import gmpy2

    def powmod(base, exp, mod):
        return int(gmpy2.powmod(base, exp, mod))

except ImportError:  # pragma: no cover
    powmod = pow


class ThresholdError(Exception):
    pass


class ParameterError(ThresholdError, ValueError):
    pass


class ThresholdNotMetError(ThresholdError):
    pass


class DuplicateSignerError(ThresholdError):
    pass


class InvalidFragmentError(ThresholdError):
    def __init__(self, index, reason="does not verify"):
        super().__init__(f"partial signature from signer {index} {reason}")
        self.index = index


class KeyConsumedError(ThresholdError):
    pass


# 512-bit p, 256-bit q, g of order q. Regenerate with scripts/gen_group.py.
DEFAULT_P = int(
    "800000000000000000000000000000000000000000000000000000000000004d"
    "f5a517ddf460c45da908f97d7f0b0ac168158b10f4d2731a42bc8f818a379f45",
    16,
)
DEFAULT_Q = int("814db4bb0d2c52050430d8de91d14881b925157983d890e82036a44297a228dd", 16)
DEFAULT_G = int(
    "1bc87e8b7f6d2d6db8bfa1baf9ee7bbb1af4a0765cafa46a9a34b0e93c75a5c3"
    "1701a88f8e3c91268cff98945c50f053f679d3ab7d286aae791431c5d5a9539f",
    16,
)

# exhaustive-test group: q = 233 makes brute-force discrete logs trivial
TINY_P, TINY_Q, TINY_G = 467, 233, 4


@lru_cache(maxsize=None)
def _check_group(p, q, g):
    from sympy import isprime

    if not isprime(q):
        raise ParameterError(f"subgroup order {q} is not prime")
    if not isprime(p):
        raise ParameterError(f"modulus {p} is not prime")
    if (p - 1) % q:
        raise ParameterError("q does not divide p - 1")
    if g % p in (0, 1) or powmod(g, q, p) != 1:
        raise ParameterError("g does not generate the order-q subgroup")


@dataclass(frozen=True)
class SchemeParams:
    p: int
    q: int
    g: int
    t: int = 1
    n: int = 1

    def __post_init__(self):
        _check_group(self.p, self.q, self.g)
        if not (1 <= self.t <= self.n):
            raise ParameterError(f"need 1 <= t <= n, got t={self.t}, n={self.n}")

    @property
    def s(self) -> int:
        """Security parameter: bit length of the subgroup order."""
        return self.q.bit_length()

    def with_threshold(self, t, n) -> "SchemeParams":
        return SchemeParams(self.p, self.q, self.g, t, n)


def default_params(t=1, n=1) -> SchemeParams:
    return SchemeParams(DEFAULT_P, DEFAULT_Q, DEFAULT_G, t, n)


def tiny_params(t=1, n=1) -> SchemeParams:
    return SchemeParams(TINY_P, TINY_Q, TINY_G, t, n)


@dataclass(frozen=True)
class GroupKey:
    value: int

    def to_bytes(self) -> bytes:
        return wire.pack(wire.Tag.GROUP_KEY, wire.uint_bytes(self.value))

    @classmethod
    def from_bytes(cls, data):
        tag, payload, rest = wire.unpack(data)
        if tag != wire.Tag.GROUP_KEY or rest:
            raise wire.EnvelopeError("not a group key envelope")
        return cls(int.from_bytes(payload, "big"))


@dataclass(frozen=True)
class KeyShare:
    index: int
    secret: int
    public: int

    def to_bytes(self) -> bytes:
        return wire.pack_record(wire.Tag.KEY_SHARE, self.index, self.secret, self.public)

    @classmethod
    def from_bytes(cls, data):
        _, (index, secret, public) = wire.unpack_record(data, wire.Tag.KEY_SHARE)
        return cls(index, secret, public)


@dataclass(frozen=True)
class PartialSignature:
    index: int
    sigma: int
    digest: int

    def to_bytes(self) -> bytes:
        return wire.pack_record(wire.Tag.PARTIAL_SIG, self.index, self.sigma, self.digest)

    @classmethod
    def from_bytes(cls, data):
        _, (index, sigma, digest) = wire.unpack_record(data, wire.Tag.PARTIAL_SIG)
        return cls(index, sigma, digest)


@dataclass(frozen=True)
class GroupSignature:
    sigma: int
    signers: tuple = ()

    def to_bytes(self) -> bytes:
        return wire.pack_record(wire.Tag.GROUP_SIG, self.sigma, list(self.signers))

    @classmethod
    def from_bytes(cls, data):
        _, (sigma, signers) = wire.unpack_record(data, wire.Tag.GROUP_SIG)
        return cls(sigma, tuple(signers))


def hash_to_scalar(msg: bytes, q: int) -> int:
    """SHA-256 of ``msg`` reduced mod ``q``; never zero.

    A zero digest is re-hashed with a one-byte counter appended.
    """
    h = int.from_bytes(hashlib.sha256(msg).digest(), "big") % q
    counter = 0
    while h == 0:
        h = int.from_bytes(hashlib.sha256(msg + bytes((counter,))).digest(), "big") % q
        counter += 1
    return h


def _seed_bytes(seed) -> bytes:
    if isinstance(seed, (bytes, bytearray)):
        return bytes(seed)
    if isinstance(seed, str):
        return seed.encode("utf-8")
    if isinstance(seed, int) and seed >= 0:
        return wire.uint_bytes(seed)
    raise ParameterError(f"unsupported seed {seed!r}")


def derive_scalar(seed, label: bytes, counter: int, q: int) -> int:
    sb = _seed_bytes(seed)
    h = hashlib.sha512(label + len(sb).to_bytes(4, "big") + sb + counter.to_bytes(4, "big"))
    return int.from_bytes(h.digest(), "big") % q


def _eval_poly(coeffs, x, q):
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % q
    return acc


def generate(params: SchemeParams, seed) -> tuple[GroupKey, list[KeyShare]]:
    """Deal ``n`` shares of a fresh degree ``t - 1`` polynomial.

    Stands in for a one-shot DKG: every party can rerun the dealing from the
    task seed, so no dealer has to be trusted inside the simulation.
    """
    q, p, g = params.q, params.p, params.g
    coeffs = []
    counter = 0
    while len(coeffs) < params.t:
        c = derive_scalar(seed, b"qosoracle/dkg", counter, q)
        counter += 1
        if not coeffs and c == 0:
            continue  # zero group secret would make every message verify
        coeffs.append(c)
    shares = []
    for i in range(1, params.n + 1):
        sk = _eval_poly(coeffs, i, q)
        shares.append(KeyShare(i, sk, powmod(g, sk, p)))
    return GroupKey(powmod(g, coeffs[0], p)), shares


def partial_sign(msg: bytes, share: KeyShare, params: SchemeParams) -> PartialSignature:
    h = hash_to_scalar(msg, params.q)
    return PartialSignature(share.index, share.secret * h % params.q, h)


def verify_partial(psig: PartialSignature, pk_i: int, msg: bytes, params: SchemeParams) -> bool:
    h = hash_to_scalar(msg, params.q)
    if psig.digest != h:
        return False
    return powmod(params.g, psig.sigma % params.q, params.p) == powmod(pk_i, h, params.p)


def lagrange_at_zero(indices: Iterable[int], q: int) -> dict[int, int]:
    idx = list(indices)
    coeffs = {}
    for i in idx:
        num, den = 1, 1
        for j in idx:
            if j != i:
                num = num * j % q
                den = den * (j - i) % q
        coeffs[i] = num * pow(den, -1, q) % q
    return coeffs


def aggregate(
    psigs: Iterable[PartialSignature],
    params: SchemeParams,
    public_shares: Mapping[int, int],
) -> GroupSignature:
    """Combine partials into a group signature.

    Uses exactly ``t`` partials, the lowest signer indices first. Every
    partial must verify against its entry in ``public_shares`` and all must
    sign the same digest.
    """
    psigs = list(psigs)
    seen = set()
    for ps in psigs:
        if ps.index in seen:
            raise DuplicateSignerError(f"signer {ps.index} appears more than once")
        seen.add(ps.index)
    if len(psigs) < params.t:
        raise ThresholdNotMetError(f"{len(psigs)} partials, threshold is {params.t}")
    psigs.sort(key=lambda ps: ps.index)
    digest = psigs[0].digest
    for ps in psigs:
        if ps.index not in public_shares:
            raise InvalidFragmentError(ps.index, "has no registered public share")
        if ps.digest != digest:
            raise InvalidFragmentError(ps.index, "signs a different digest")
        lhs = powmod(params.g, ps.sigma % params.q, params.p)
        if lhs != powmod(public_shares[ps.index], digest, params.p):
            raise InvalidFragmentError(ps.index)
    chosen = psigs[: params.t]
    lam = lagrange_at_zero([ps.index for ps in chosen], params.q)
    sigma = sum(lam[ps.index] * ps.sigma for ps in chosen) % params.q
    return GroupSignature(sigma, tuple(ps.index for ps in chosen))


def verify(msg: bytes, pk: GroupKey, sig: GroupSignature, params: SchemeParams) -> bool:
    h = hash_to_scalar(msg, params.q)
    return powmod(params.g, sig.sigma % params.q, params.p) == powmod(pk.value, h, params.p)


def combine_public_shares(public_shares: Mapping[int, int], params: SchemeParams) -> GroupKey:
    """Lagrange interpolation in the exponent over the given share keys."""
    lam = lagrange_at_zero(public_shares, params.q)
    acc = 1
    for i, pk_i in public_shares.items():
        acc = acc * powmod(pk_i, lam[i], params.p) % params.p
    return GroupKey(acc)


@dataclass
class SigningSession:
    """Public side of one task's key set; aggregates at most once."""

    params: SchemeParams
    group_key: GroupKey
    public_shares: dict
    consumed: bool = field(default=False, init=False)

    @classmethod
    def from_shares(cls, params, group_key, shares):
        return cls(params, group_key, {s.index: s.public for s in shares})

    def aggregate(self, psigs) -> GroupSignature:
        if self.consumed:
            raise KeyConsumedError("this key set already produced a group signature")
        sig = aggregate(psigs, self.params, self.public_shares)
        self.consumed = True
        return sig

    def verify(self, msg, sig) -> bool:
        return verify(msg, self.group_key, sig, self.params)


# Ordinary single-party keys (leader signatures): the t = n = 1 case.

@dataclass(frozen=True)
class LeaderKey:
    secret: int
    public: int


def leader_keygen(seed, params: SchemeParams) -> LeaderKey:
    counter = 0
    while True:
        sk = derive_scalar(seed, b"qosoracle/leader", counter, params.q)
        if sk:
            return LeaderKey(sk, powmod(params.g, sk, params.p))
        counter += 1


def leader_sign(payload: bytes, key: LeaderKey, params: SchemeParams) -> int:
    return key.secret * hash_to_scalar(payload, params.q) % params.q


def leader_verify(payload: bytes, signature: int, public: int, params: SchemeParams) -> bool:
    h = hash_to_scalar(payload, params.q)
    return powmod(params.g, signature % params.q, params.p) == powmod(public, h, params.p)
