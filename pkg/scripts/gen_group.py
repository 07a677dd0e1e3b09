"""Regenerate the default 512/256-bit group constants in qosoracle.crypto."""

import hashlib

from sympy import isprime, nextprime

seed = int.from_bytes(hashlib.sha512(b"qosoracle default group v1").digest(), "big")
q = nextprime((seed >> 256) | (1 << 255))
k = (1 << 511) // q
k += k % 2
while True:
    p = k * q + 1
    if p.bit_length() == 512 and isprime(p):
        break
    k += 2
h = 2
while pow(h, (p - 1) // q, p) == 1:
    h += 1
g = pow(h, (p - 1) // q, p)
print(f"p = {p:#x}\nq = {q:#x}\ng = {g:#x}")
