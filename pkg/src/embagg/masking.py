"""Pairwise one-time-pad masking between clients, keyed by Diffie-Hellman.

Every client-to-client payload travels through the relay, so each ordered
pair of clients masks what it relays: sender adds a pad vector (mod p),
receiver subtracts the identical pad.  Pads come from a deterministic
stream (SHAKE-256 expansion with rejection sampling, exactly uniform over
the field) seeded per message from the pair's agreed master secret plus a
purpose tag, the round, the sender, and the slot — distinct messages never
share a pad, and an audit-mode guard trips if a seed is ever issued twice.

Key agreement is classic finite-field Diffie-Hellman.  The default group is
the 2048-bit MODP group from RFC 3526; a small Mersenne-prime toy group is
available for tests behind an explicit insecure flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .field import Field, vec_add, vec_sub
from .rng import ByteSampler, derive_seed

__all__ = [
    "MaskingError",
    "DhGroup",
    "MODP_2048",
    "TOY_GROUP",
    "DhKeyPair",
    "agree_master",
    "pad_seed",
    "PadStream",
    "PadReuseGuard",
    "otp_mask",
    "otp_unmask",
]


class MaskingError(ValueError):
    """Raised for degenerate keys, wrong groups, or pad reuse."""


# RFC 3526, group 14 (2048-bit MODP), generator 2.
_MODP_2048_HEX = (
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1"
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD"
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245"
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D"
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F"
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D"
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9"
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF"
)


@dataclass(frozen=True)
class DhGroup:
    modulus: int
    generator: int
    insecure: bool = False

    @property
    def elem_bytes(self) -> int:
        return (self.modulus.bit_length() + 7) // 8


MODP_2048 = DhGroup(modulus=int(_MODP_2048_HEX, 16), generator=2)

# 2^31 - 1 is prime; fine for deterministic tests, worthless against anyone.
TOY_GROUP = DhGroup(modulus=(1 << 31) - 1, generator=7, insecure=True)


@dataclass(frozen=True)
class DhKeyPair:
    group: DhGroup
    secret: int
    public: int

    @classmethod
    def generate(cls, group: DhGroup, sampler: ByteSampler) -> "DhKeyPair":
        # Secrets in [2, q-2]; endpoints give degenerate public values.
        secret = 2 + sampler.int_below(group.modulus - 4)
        return cls(
            group=group,
            secret=secret,
            public=pow(group.generator, secret, group.modulus),
        )


def agree_master(keypair: DhKeyPair, peer_public: int) -> bytes:
    """Shared master secret bytes for one client pair."""
    group = keypair.group
    if not 2 <= peer_public <= group.modulus - 2:
        raise MaskingError(f"degenerate peer public value {peer_public}")
    shared = pow(peer_public, keypair.secret, group.modulus)
    return derive_seed(shared.to_bytes(group.elem_bytes, "big"), "dh-master")


# -- pad streams -----------------------------------------------------------


def pad_seed(master: bytes, purpose: str, round_idx: int, sender: int, slot: int) -> bytes:
    """Per-message pad seed; every argument is part of the derivation."""
    if purpose not in ("share", "query", "union-share"):
        raise MaskingError(f"unknown pad purpose {purpose!r}")
    return derive_seed(master, "pad", purpose, round_idx, sender, slot)


class PadStream:
    """Uniform field elements derived from one pad seed.

    Both endpoints of a message instantiate the same stream and walk it in
    the same order, so the receiver's subtraction cancels the sender's
    addition element for element.
    """

    __slots__ = ("field", "_sampler", "drawn")

    def __init__(self, seed: bytes, field: Field):
        self.field = field
        self._sampler = ByteSampler(seed)
        self.drawn = 0

    def next_element(self) -> int:
        self.drawn += 1
        return self._sampler.int_below(self.field.p)

    def next_vec(self, k: int) -> tuple[int, ...]:
        return tuple(self.next_element() for _ in range(k))


class PadReuseGuard:
    """Audit-mode registry asserting each pad seed is issued at most once."""

    def __init__(self) -> None:
        self._seen: set[bytes] = set()

    def claim(self, seed: bytes) -> None:
        if seed in self._seen:
            raise MaskingError("one-time pad seed issued twice")
        self._seen.add(seed)


def otp_mask(field: Field, payload: Sequence[int], stream: PadStream) -> tuple[int, ...]:
    """Add the next pad vector to ``payload`` (mod p)."""
    return vec_add(field, tuple(payload), stream.next_vec(len(payload)))


def otp_unmask(field: Field, masked: Sequence[int], stream: PadStream) -> tuple[int, ...]:
    """Subtract the same pad vector the sender added."""
    return vec_sub(field, tuple(masked), stream.next_vec(len(masked)))
