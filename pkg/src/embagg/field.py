"""Prime-field arithmetic, fixed-point encoding, and bounded rational decoding.

Everything downstream (share encoding, masking, the union table, response
blinding) works over one prime field F_p.  Field elements are plain Python
ints kept in canonical form, i.e. in ``[0, p)``; the :class:`Field` object
carries the modulus and the byte width used on the wire.

Real-valued embeddings enter the field through a fixed-point codec
(``round(scale * x) mod p``, negatives in the upper half of ``[0, p)``) and
leave it through bounded rational reconstruction: the protocol's output for
one coordinate is the field ratio ``sum * count^-1``, and with
``2 * num_bound * den_bound < p`` that ratio pins down a unique fraction
``s / c`` with ``|s| <= num_bound`` and ``0 < c <= den_bound``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

__all__ = [
    "FieldError",
    "ReconstructionError",
    "Field",
    "FixedPointCodec",
    "is_probable_prime",
    "next_prime",
    "default_modulus",
    "rational_reconstruct",
    "decode_blinded_ratio",
    "vec_add",
    "vec_sub",
    "vec_scale",
]

# Deterministic Miller-Rabin witness set: correct for all n < 3.3 * 10^24,
# overwhelming for anything larger that we would ever feed it.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


class FieldError(ValueError):
    """Raised for invalid field parameters or out-of-range operands."""


class ReconstructionError(ValueError):
    """Raised when no fraction within the stated bounds matches a residue."""


def is_probable_prime(n: int) -> bool:
    """Miller-Rabin primality check with a fixed witness set."""
    if n < 2:
        return False
    for small in _MR_BASES:
        if n == small:
            return True
        if n % small == 0:
            return False
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime(n: int) -> int:
    """Smallest prime strictly greater than ``n``."""
    candidate = n + 1
    if candidate <= 2:
        return 2
    if candidate % 2 == 0:
        candidate += 1
    while not is_probable_prime(candidate):
        candidate += 2
    return candidate


def default_modulus(n_clients: int, int_bound: int, safety: int = 4) -> int:
    """Default field modulus: smallest prime above ``2 * N^2 * B * safety``.

    ``B`` is the per-client bound on encoded integer magnitudes.  A sum over
    N clients stays below ``N*B`` and the divisor below ``N``, so unique
    rational decoding needs ``p > 2 * (N*B) * N``; the safety factor keeps
    headroom.
    """
    if n_clients < 1 or int_bound < 1 or safety < 1:
        raise FieldError("n_clients, int_bound and safety must be positive")
    return next_prime(2 * n_clients * n_clients * int_bound * safety)


class Field:
    """Prime field F_p with canonical int representatives in ``[0, p)``.

    Not constant-time and not hardened — arithmetic here protects nothing by
    itself; privacy in the protocol comes from the masking and sharing layers
    on top.
    """

    __slots__ = ("p", "bit_length", "elem_bytes")

    def __init__(self, p: int, check_prime: bool = True):
        if p < 2:
            raise FieldError(f"modulus must be >= 2, got {p}")
        if check_prime and not is_probable_prime(p):
            raise FieldError(f"modulus {p} is not prime")
        self.p = p
        self.bit_length = p.bit_length()
        self.elem_bytes = (self.bit_length + 7) // 8

    # -- scalar arithmetic -------------------------------------------------

    def reduce(self, x: int) -> int:
        return x % self.p

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.p

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.p

    def mul(self, a: int, b: int) -> int:
        return (a * b) % self.p

    def neg(self, a: int) -> int:
        return (-a) % self.p

    def inv(self, a: int) -> int:
        a %= self.p
        if a == 0:
            raise ZeroDivisionError("no inverse of 0 in a field")
        return pow(a, self.p - 2, self.p)

    def div(self, a: int, b: int) -> int:
        return (a * self.inv(b)) % self.p

    # -- signed view -------------------------------------------------------

    def to_signed(self, a: int) -> int:
        """Map a canonical element to the symmetric range around zero."""
        a %= self.p
        return a - self.p if a > self.p // 2 else a

    def from_signed(self, x: int) -> int:
        return x % self.p

    # -- wire form ---------------------------------------------------------

    def encode(self, a: int) -> bytes:
        """Fixed-width big-endian byte string of one canonical element."""
        if not 0 <= a < self.p:
            raise FieldError(f"element {a} out of range for modulus {self.p}")
        return a.to_bytes(self.elem_bytes, "big")

    def decode(self, data: bytes) -> int:
        if len(data) != self.elem_bytes:
            raise FieldError(
                f"expected {self.elem_bytes} bytes per element, got {len(data)}"
            )
        a = int.from_bytes(data, "big")
        if a >= self.p:
            raise FieldError(f"decoded value {a} is not a canonical element")
        return a

    def encode_vec(self, vec: Sequence[int]) -> bytes:
        return b"".join(self.encode(a) for a in vec)

    def decode_vec(self, data: bytes) -> tuple[int, ...]:
        w = self.elem_bytes
        if len(data) % w != 0:
            raise FieldError("byte string length is not a multiple of the element width")
        return tuple(self.decode(data[i : i + w]) for i in range(0, len(data), w))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Field) and other.p == self.p

    def __hash__(self) -> int:
        return hash(("Field", self.p))

    def __repr__(self) -> str:
        return f"Field(p={self.p})"


# -- vectors ---------------------------------------------------------------


def vec_add(field: Field, a: Sequence[int], b: Sequence[int]) -> tuple[int, ...]:
    if len(a) != len(b):
        raise FieldError(f"vector length mismatch: {len(a)} vs {len(b)}")
    p = field.p
    return tuple((x + y) % p for x, y in zip(a, b))


def vec_sub(field: Field, a: Sequence[int], b: Sequence[int]) -> tuple[int, ...]:
    if len(a) != len(b):
        raise FieldError(f"vector length mismatch: {len(a)} vs {len(b)}")
    p = field.p
    return tuple((x - y) % p for x, y in zip(a, b))


def vec_scale(field: Field, k: int, a: Iterable[int]) -> tuple[int, ...]:
    p = field.p
    return tuple(k * x % p for x in a)


# -- fixed-point codec -----------------------------------------------------


@dataclass(frozen=True)
class FixedPointCodec:
    """Fixed-point map between reals and field elements.

    ``scale`` is the quantization step denominator (value x becomes
    ``round(scale * x)``), ``int_bound`` the largest encoded magnitude the
    deployment promises to feed in.  The field must leave room for sums of
    ``n_clients`` such values *and* for unique rational decoding.
    """

    scale: int = 1 << 16
    int_bound: int = 1 << 16

    def __post_init__(self) -> None:
        if self.scale < 1 or self.int_bound < 1:
            raise FieldError("scale and int_bound must be positive")

    def encode_real(self, x: float, field: Field) -> int:
        q = round(self.scale * x)
        if abs(q) > self.int_bound:
            raise FieldError(
                f"value {x} quantizes to {q}, beyond the configured bound {self.int_bound}"
            )
        return q % field.p

    def quantize(self, x: float) -> int:
        """Signed integer grid point for ``x`` (no field reduction)."""
        q = round(self.scale * x)
        if abs(q) > self.int_bound:
            raise FieldError(
                f"value {x} quantizes to {q}, beyond the configured bound {self.int_bound}"
            )
        return q

    def to_real(self, q: int) -> Fraction:
        """Exact real value of a signed grid point."""
        return Fraction(q, self.scale)


# -- bounded rational reconstruction ---------------------------------------


def rational_reconstruct(
    a: int, field: Field, num_bound: int, den_bound: int
) -> Fraction:
    """Recover the fraction ``s/c`` hiding behind the residue ``a``.

    Finds ``s, c`` with ``s * inv(c) == a (mod p)``, ``|s| <= num_bound`` and
    ``0 < c <= den_bound`` by truncating the extended Euclidean remainder
    sequence of ``(p, a)`` at the first remainder within the numerator bound.
    When ``2 * num_bound * den_bound < p`` that fraction is unique.
    """
    p = field.p
    if num_bound < 1 or den_bound < 1:
        raise ReconstructionError("bounds must be positive")
    a %= p
    if a == 0:
        return Fraction(0, 1)
    # Remainder/cofactor pairs satisfying r == t * a (mod p) throughout.
    r0, t0 = p, 0
    r1, t1 = a, 1
    while r1 > num_bound:
        q = r0 // r1
        r0, r1 = r1, r0 - q * r1
        t0, t1 = t1, t0 - q * t1
    if t1 == 0:
        raise ReconstructionError(
            f"no fraction within bounds ({num_bound}, {den_bound}) matches residue {a}"
        )
    s, c = (r1, t1) if t1 > 0 else (-r1, -t1)
    frac = Fraction(s, c)  # normalizes gcd and sign
    if abs(frac.numerator) > num_bound or frac.denominator > den_bound:
        raise ReconstructionError(
            f"no fraction within bounds ({num_bound}, {den_bound}) matches residue {a}"
        )
    if frac.numerator % p * field.inv(frac.denominator) % p != a:
        raise ReconstructionError(f"reconstruction self-check failed for residue {a}")
    return frac


def decode_blinded_ratio(
    a: int, field: Field, codec: FixedPointCodec, n_clients: int
) -> Fraction:
    """Exact real value decoded from one aggregated-ratio field element.

    ``a`` is ``(sum of encoded values) * inv(owner count)`` in the field; the
    sum is bounded by ``n_clients * int_bound`` and the count by
    ``n_clients``, so the fraction is recoverable whenever the modulus obeys
    the sizing precondition.  The result is divided by the codec scale to
    land back on the real line.
    """
    num_bound = n_clients * codec.int_bound
    if 2 * num_bound * n_clients >= field.p:
        raise ReconstructionError(
            f"modulus {field.p} too small for unique decoding with "
            f"num_bound={num_bound}, den_bound={n_clients}"
        )
    return rational_reconstruct(a, field, num_bound, n_clients) / codec.scale
