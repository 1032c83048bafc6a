"""Additively homomorphic encryption (Paillier, g = n + 1 variant).

The relay re-randomizes every retrieval response under the querier's public
key: scaling a ciphertext by a field scalar and adding an encrypted blinding
term, without ever seeing the plaintext.  That needs exactly two homomorphic
identities:

    dec(c_add(enc(a), enc(b))) == a + b      (mod n)
    dec(c_scale(enc(a), k))    == k * a      (mod n)

With the generator fixed to n + 1, encryption needs no discrete log table:
``enc(m) = (1 + m*n) * r^n mod n^2`` and decryption uses ``lambda = phi(n)``,
``mu = phi(n)^-1 mod n``.

Key sizes below 512 bits are refused unless explicitly flagged insecure;
the toy sizes (16-64 bits) exist so tests can enumerate plaintext spaces.
Nothing here is constant-time.
"""

from __future__ import annotations

from dataclasses import dataclass

from .field import is_probable_prime
from .rng import ByteSampler

__all__ = [
    "PaillierError",
    "PaillierPublicKey",
    "PaillierKeypair",
    "Ciphertext",
    "generate_keypair",
    "keypair_from_primes",
    "c_add",
    "c_scale",
    "serialize_ciphertext",
    "deserialize_ciphertext",
]

MIN_SECURE_BITS = 512
MIN_TOY_BITS = 16


class PaillierError(ValueError):
    """Raised for invalid keys, plaintexts, or mismatched ciphertexts."""


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    key_id: int

    @property
    def n_sq(self) -> int:
        return self.n * self.n

    @property
    def ct_bytes(self) -> int:
        """Fixed serialized width of one ciphertext under this key."""
        return (self.n_sq.bit_length() + 7) // 8

    def encrypt(self, m: int, obfuscator: int) -> "Ciphertext":
        """Encrypt ``m`` in [0, n) with the given unit obfuscator in [1, n)."""
        n, n_sq = self.n, self.n_sq
        if not 0 <= m < n:
            raise PaillierError(f"plaintext {m} outside [0, {n})")
        if not 1 <= obfuscator < n:
            raise PaillierError("obfuscator must lie in [1, n)")
        return Ciphertext(
            value=(1 + m * n) * pow(obfuscator, n, n_sq) % n_sq,
            key_id=self.key_id,
        )

    def encrypt_sampled(self, m: int, sampler: ByteSampler) -> "Ciphertext":
        """Encrypt with an obfuscator drawn from a deterministic sampler."""
        while True:
            r = sampler.nonzero_below(self.n)
            # A non-unit r would leak a factor of n; astronomically unlikely
            # for real keys, but toy moduli do hit it.
            if _gcd(r, self.n) == 1:
                return self.encrypt(m, r)


@dataclass(frozen=True)
class PaillierKeypair:
    public: PaillierPublicKey
    lam: int  # phi(n)
    mu: int  # phi(n)^-1 mod n

    def decrypt(self, ct: "Ciphertext") -> int:
        pk = self.public
        if ct.key_id != pk.key_id:
            raise PaillierError(
                f"ciphertext for key {ct.key_id} fed to keypair {pk.key_id}"
            )
        if not 0 <= ct.value < pk.n_sq:
            raise PaillierError("ciphertext out of range")
        u = pow(ct.value, self.lam, pk.n_sq)
        return (u - 1) // pk.n * self.mu % pk.n


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: int


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def _sample_prime(bits: int, sampler: ByteSampler) -> int:
    """Odd prime with exactly ``bits`` bits (top two bits forced)."""
    while True:
        cand = sampler.int_bits(bits)
        cand |= (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        if is_probable_prime(cand):
            return cand


def keypair_from_primes(p: int, q: int, key_id: int) -> PaillierKeypair:
    """Assemble a keypair from two distinct odd primes (test/tooling hook)."""
    if p == q:
        raise PaillierError("p and q must differ")
    n = p * q
    lam = (p - 1) * (q - 1)
    mu = pow(lam, -1, n)
    return PaillierKeypair(public=PaillierPublicKey(n=n, key_id=key_id), lam=lam, mu=mu)


def generate_keypair(
    bits: int, key_id: int, sampler: ByteSampler, insecure: bool = False
) -> PaillierKeypair:
    """Generate a keypair with an n of exactly ``bits`` bits.

    ``bits`` below 512 is a toy size and must be explicitly flagged
    ``insecure``; below 16 is refused outright.
    """
    if bits % 2 != 0:
        raise PaillierError("key size must be even")
    if bits < MIN_TOY_BITS:
        raise PaillierError(f"key size {bits} below the {MIN_TOY_BITS}-bit floor")
    if bits < MIN_SECURE_BITS and not insecure:
        raise PaillierError(
            f"key size {bits} < {MIN_SECURE_BITS} requires the insecure flag"
        )
    half = bits // 2
    while True:
        p = _sample_prime(half, sampler)
        q = _sample_prime(half, sampler)
        if p == q:
            continue
        n = p * q
        if n.bit_length() == bits:
            return keypair_from_primes(p, q, key_id)


def c_add(pk: PaillierPublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Ciphertext of the plaintext sum (mod n)."""
    if a.key_id != pk.key_id or b.key_id != pk.key_id:
        raise PaillierError("cannot add ciphertexts under different keys")
    return Ciphertext(value=a.value * b.value % pk.n_sq, key_id=pk.key_id)


def c_scale(pk: PaillierPublicKey, a: Ciphertext, k: int) -> Ciphertext:
    """Ciphertext of the plaintext scaled by ``k`` (mod n)."""
    if a.key_id != pk.key_id:
        raise PaillierError("cannot scale a ciphertext under a different key")
    if k < 0:
        raise PaillierError("scale factor must be non-negative")
    return Ciphertext(value=pow(a.value, k, pk.n_sq), key_id=pk.key_id)


# -- wire form -------------------------------------------------------------


def serialize_ciphertext(pk: PaillierPublicKey, ct: Ciphertext) -> bytes:
    """4-byte key id, 4-byte length, fixed-width big-endian ciphertext."""
    width = pk.ct_bytes
    return (
        ct.key_id.to_bytes(4, "big")
        + width.to_bytes(4, "big")
        + ct.value.to_bytes(width, "big")
    )


def deserialize_ciphertext(data: bytes, offset: int = 0) -> tuple[Ciphertext, int]:
    if len(data) - offset < 8:
        raise PaillierError("truncated ciphertext header")
    key_id = int.from_bytes(data[offset : offset + 4], "big")
    width = int.from_bytes(data[offset + 4 : offset + 8], "big")
    end = offset + 8 + width
    if len(data) < end:
        raise PaillierError("truncated ciphertext body")
    value = int.from_bytes(data[offset + 8 : end], "big")
    return Ciphertext(value=value, key_id=key_id), end
