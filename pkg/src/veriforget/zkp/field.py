"""Prime-field arithmetic, an algebraic sponge, and Merkle commitments.

The field is the BN254 scalar field (the scalar field of a standard
SNARK-friendly curve).  The sponge is a Poseidon-style permutation with
state width 3, x^5 S-box, 8 full and 56 partial rounds, and
nothing-up-my-sleeve constants derived by hashing a fixed tag.
Commitments are arity-2 Merkle trees over blinded leaf chunks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

try:
    from gmpy2 import mpz
except ImportError:  # pragma: no cover - gmpy2 is an optional speedup
    def mpz(x):
        return x

MODULUS = (
    21888242871839275222246405745257275088548364400416034343698204186575808495617
)

FULL_ROUNDS = 8
PARTIAL_ROUNDS = 56
LEAF_CHUNK = 1024


class WraparoundError(ValueError):
    """A signed value too large to embed without modular wraparound."""


def to_field(x: int) -> int:
    """Signed integer -> field element; magnitude must stay below p/2."""
    if abs(x) >= MODULUS // 2:
        raise WraparoundError(f"|{x}| >= p/2; cannot encode without wraparound")
    return x % MODULUS


def from_field(x: int) -> int:
    """Field element -> centered signed representative in (-p/2, p/2)."""
    x %= MODULUS
    return x - MODULUS if x > MODULUS // 2 else x


def _nums_constant(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode()).digest(), "big") % MODULUS


_RC = [
    [mpz(_nums_constant(f"veriforget/poseidon/rc/{r}/{j}")) for j in range(3)]
    for r in range(FULL_ROUNDS + PARTIAL_ROUNDS)
]
# Cauchy-style MDS row generators: m[i][j] = 1 / (x_i + y_j) with
# x = (0,1,2), y = (3,4,5); invertible over a prime field.
_MDS = [
    [mpz(pow(xi + yj, MODULUS - 2, MODULUS)) for yj in (3, 4, 5)]
    for xi in (0, 1, 2)
]
_P = mpz(MODULUS)


def permute(state: tuple[int, int, int]) -> tuple[int, int, int]:
    a, b, c = mpz(state[0]), mpz(state[1]), mpz(state[2])
    p = _P
    half = FULL_ROUNDS // 2
    total = FULL_ROUNDS + PARTIAL_ROUNDS
    m0, m1, m2 = _MDS
    for r in range(total):
        rc = _RC[r]
        a = (a + rc[0]) % p
        b = (b + rc[1]) % p
        c = (c + rc[2]) % p
        a = pow(a, 5, p)
        if r < half or r >= total - half:
            b = pow(b, 5, p)
            c = pow(c, 5, p)
        a, b, c = (
            (a * m0[0] + b * m0[1] + c * m0[2]) % p,
            (a * m1[0] + b * m1[1] + c * m1[2]) % p,
            (a * m2[0] + b * m2[1] + c * m2[2]) % p,
        )
    return int(a), int(b), int(c)


def sponge(elements, domain: str) -> int:
    """Absorb field elements at rate 2; squeeze one element."""
    cap = _nums_constant(f"veriforget/sponge/{domain}/{len(elements)}")
    a, b, c = mpz(0), mpz(0), mpz(cap)
    p = _P
    half = FULL_ROUNDS // 2
    total = FULL_ROUNDS + PARTIAL_ROUNDS
    m0, m1, m2 = _MDS
    n = len(elements)
    for i in range(0, n, 2):
        a = (a + elements[i]) % p
        if i + 1 < n:
            b = (b + elements[i + 1]) % p
        # inlined permutation; keeping state as mpz across absorptions
        for r in range(total):
            rc = _RC[r]
            a = (a + rc[0]) % p
            b = (b + rc[1]) % p
            c = (c + rc[2]) % p
            a = pow(a, 5, p)
            if r < half or r >= total - half:
                b = pow(b, 5, p)
                c = pow(c, 5, p)
            a, b, c = (
                (a * m0[0] + b * m0[1] + c * m0[2]) % p,
                (a * m1[0] + b * m1[1] + c * m1[2]) % p,
                (a * m2[0] + b * m2[1] + c * m2[2]) % p,
            )
    return int(a)


def _blinding(randomness: int, index: int) -> int:
    return _nums_constant(f"veriforget/blind/{randomness}/{index}")


@dataclass(frozen=True)
class Commitment:
    digest: int  # field element (Merkle root)
    randomness: int

    @property
    def digest_hex(self) -> str:
        return f"{self.digest:064x}"


def merkle_root(ints, randomness: int) -> int:
    """Root over blinded leaf chunks of LEAF_CHUNK field elements each."""
    if isinstance(ints, np.ndarray):
        ints = [int(x) for x in ints.ravel()]
    leaves = []
    for li in range(0, max(len(ints), 1), LEAF_CHUNK):
        chunk = [to_field(x) for x in ints[li : li + LEAF_CHUNK]]
        chunk.append(_blinding(randomness, li // LEAF_CHUNK))
        leaves.append(sponge(chunk, "leaf"))
    level = 0
    while len(leaves) > 1:
        nxt = []
        for i in range(0, len(leaves) - 1, 2):
            nxt.append(sponge([leaves[i], leaves[i + 1]], f"node/{level}"))
        if len(leaves) % 2:
            nxt.append(leaves[-1])
        leaves = nxt
        level += 1
    return leaves[0]


def commit_vector(ints, randomness: int) -> Commitment:
    """Binding, hiding commitment to a vector of signed integers."""
    return Commitment(digest=merkle_root(ints, randomness), randomness=randomness)


def verify_commit(digest: int, ints, randomness: int) -> bool:
    try:
        return merkle_root(ints, randomness) == digest
    except WraparoundError:
        return False
