"""Deterministic randomness: seed derivation and byte-stream samplers.

Every random draw in a deployment flows from one master seed through keyed
derivations, never from arrival order or wall clock.  That is what makes a
run reproducible: identical configs give identical transcripts, and the
simulator and a TCP loopback run emit byte-identical payload frames.

``derive_seed`` is an HMAC-SHA256 chain over typed tags; ``ByteSampler``
expands a seed into an unbounded byte stream (SHAKE-256 over a block
counter) with rejection-sampled uniform integers on top.
"""

from __future__ import annotations

import hashlib
import hmac

__all__ = ["derive_seed", "ByteSampler"]

_DOMAIN = b"embagg.v1"


def _encode_tag(tag: object) -> bytes:
    if isinstance(tag, bytes):
        body, kind = tag, b"b"
    elif isinstance(tag, str):
        body, kind = tag.encode("utf-8"), b"s"
    elif isinstance(tag, int):
        body, kind = str(tag).encode("ascii"), b"i"
    else:
        raise TypeError(f"unsupported tag type {type(tag)!r}")
    return kind + len(body).to_bytes(4, "big") + body


def derive_seed(key: bytes, *tags: object) -> bytes:
    """32-byte subkey bound to ``key`` and the ordered, typed tag tuple."""
    mac = hmac.new(key, _DOMAIN, hashlib.sha256)
    for tag in tags:
        mac.update(_encode_tag(tag))
    return mac.digest()


class ByteSampler:
    """Deterministic byte stream with uniform integer draws.

    The stream is SHAKE-256 of ``seed || counter`` in 64-byte blocks.
    ``int_below`` draws ``bit_length(n)`` bits at a time and rejects values
    >= n, so results are exactly uniform and both ends of a channel walk the
    stream identically.
    """

    __slots__ = ("_seed", "_counter", "_buf", "_pos")

    def __init__(self, seed: bytes):
        self._seed = bytes(seed)
        self._counter = 0
        self._buf = b""
        self._pos = 0

    def take(self, k: int) -> bytes:
        out = bytearray()
        while k > 0:
            if self._pos >= len(self._buf):
                block = hashlib.shake_256(
                    self._seed + self._counter.to_bytes(8, "big")
                ).digest(64)
                self._counter += 1
                self._buf = block
                self._pos = 0
            chunk = self._buf[self._pos : self._pos + k]
            out += chunk
            self._pos += len(chunk)
            k -= len(chunk)
        return bytes(out)

    def int_below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n < 1:
            raise ValueError("int_below needs n >= 1")
        if n == 1:
            return 0
        bits = (n - 1).bit_length()
        nbytes = (bits + 7) // 8
        shift = nbytes * 8 - bits
        while True:
            raw = int.from_bytes(self.take(nbytes), "big") >> shift
            if raw < n:
                return raw

    def nonzero_below(self, n: int) -> int:
        """Uniform integer in [1, n)."""
        if n < 2:
            raise ValueError("nonzero_below needs n >= 2")
        return 1 + self.int_below(n - 1)

    def int_bits(self, bits: int) -> int:
        """Uniform integer with exactly ``bits`` random bits."""
        if bits < 1:
            raise ValueError("int_bits needs bits >= 1")
        nbytes = (bits + 7) // 8
        return int.from_bytes(self.take(nbytes), "big") >> (nbytes * 8 - bits)
