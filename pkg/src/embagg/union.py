"""Private entity-set union via a randomized-annihilator hash table.

Before any aggregation round, the clients must agree on the union of their
entity sets without anyone (clients or relay) learning who contributed
which entity.  Each entity id is hashed to a nonzero field element (its
*image*); for one union attempt every client builds a table of L buckets
with two cells per bucket and, for each entity it owns,

    U[b] += rho          W[b] += rho * image        (b = salted bucket)

with a fresh uniform nonzero ``rho`` per entity.  Tables are combined by
plain vector addition — which happens under T-private additive sharing, so
nobody sees an individual table.  In the combined table a bucket holding
one distinct entity yields ``W/U == image`` no matter how many clients
contributed it (their rhos just add); a bucket holding two distinct
entities yields an essentially random ratio, caught by re-hashing the
candidate image — that raises :class:`CollisionDetected` and the attempt is
retried with a fresh salt and twice the buckets.

The aggregate coefficient ``U[b]`` is a sum of uniform nonzero elements, so
the table hides contributor counts up to the k-fold cancellation event of
probability 1/(p-1).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Collection, Iterable, Sequence

from .field import Field, FieldError
from .rng import ByteSampler

__all__ = [
    "CollisionDetected",
    "entity_image",
    "bucket_of",
    "initial_bucket_count",
    "build_contribution",
    "additive_split",
    "combine_tables",
    "extract_union",
    "UnionAttempt",
    "RETRY_LIMIT_DEFAULT",
]

RETRY_LIMIT_DEFAULT = 8


class CollisionDetected(ValueError):
    """A bucket's ratio failed validation: distinct entities collided."""

    def __init__(self, bucket: int, message: str):
        super().__init__(message)
        self.bucket = bucket


def entity_image(raw: str, field: Field) -> int:
    """Deployment-wide deterministic nonzero field image of an entity id."""
    counter = 0
    data = raw.encode("utf-8")
    while True:
        digest = hashlib.sha256(
            b"embagg.entity|" + counter.to_bytes(4, "big") + data
        ).digest()
        image = int.from_bytes(digest, "big") % field.p
        if image != 0:
            return image
        counter += 1


def bucket_of(image: int, salt: bytes, n_buckets: int) -> int:
    """Salted bucket index of one entity image."""
    if n_buckets < 1:
        raise FieldError("need at least one bucket")
    digest = hashlib.sha256(
        b"embagg.bucket|" + salt + image.to_bytes((image.bit_length() + 7) // 8 or 1, "big")
    ).digest()
    return int.from_bytes(digest, "big") % n_buckets


def initial_bucket_count(capacity_hint: int) -> int:
    """Default table size: 4 * hint^2 buckets (birthday headroom), min 8."""
    if capacity_hint < 1:
        raise FieldError("capacity hint must be positive")
    return max(8, 4 * capacity_hint * capacity_hint)


def build_contribution(
    images: Iterable[int],
    field: Field,
    n_buckets: int,
    salt: bytes,
    sampler: ByteSampler,
) -> tuple[int, ...]:
    """One client's table for one attempt, flat layout ``[U_0, W_0, U_1, ...]``.

    Draws one uniform nonzero annihilator per entity from ``sampler`` (in
    the iteration order of ``images``  — callers pass a canonical order so
    runs are reproducible).
    """
    p = field.p
    cells = [0] * (2 * n_buckets)
    for image in images:
        if not 0 < image < p:
            raise FieldError(f"entity image {image} is not a nonzero field element")
        rho = sampler.nonzero_below(p)
        b = bucket_of(image, salt, n_buckets)
        cells[2 * b] = (cells[2 * b] + rho) % p
        cells[2 * b + 1] = (cells[2 * b + 1] + rho * image) % p
    return tuple(cells)


def additive_split(
    field: Field, vec: Sequence[int], n_shares: int, sampler: ByteSampler
) -> list[tuple[int, ...]]:
    """Split a vector into ``n_shares`` uniform additive shares.

    The first ``n_shares - 1`` shares are fresh uniform vectors; the last is
    the remainder.  Any subset of fewer than ``n_shares`` shares is jointly
    uniform, so handing one share to each party is T-private for any T below
    the party count.
    """
    if n_shares < 1:
        raise FieldError("need at least one share")
    p = field.p
    remainder = list(vec)
    shares: list[tuple[int, ...]] = []
    for _ in range(n_shares - 1):
        share = tuple(sampler.int_below(p) for _ in vec)
        shares.append(share)
        for i, s in enumerate(share):
            remainder[i] = (remainder[i] - s) % p
    shares.append(tuple(remainder))
    return shares


def combine_tables(field: Field, tables: Iterable[Sequence[int]]) -> tuple[int, ...]:
    """Coordinatewise sum of contribution tables (or of additive shares)."""
    acc: list[int] | None = None
    p = field.p
    for table in tables:
        if acc is None:
            acc = [x % p for x in table]
        else:
            if len(table) != len(acc):
                raise FieldError("table length mismatch")
            for i, x in enumerate(table):
                acc[i] = (acc[i] + x) % p
    if acc is None:
        raise FieldError("no tables to combine")
    return tuple(acc)


def extract_union(
    cells: Sequence[int],
    field: Field,
    salt: bytes,
    n_buckets: int,
    registry: Collection[int] | None = None,
) -> tuple[int, ...]:
    """Sorted entity images present in a combined table.

    Raises :class:`CollisionDetected` when any bucket's ratio fails the
    re-hash check (or a cancelled coefficient leaves an inconsistent cell).
    ``registry`` is the public set of registrable entity images; with it,
    any candidate outside the registry is also a detected collision — the
    check that still bites when a single bucket makes re-hashing vacuous.
    The protocol always supplies it.
    """
    if len(cells) != 2 * n_buckets:
        raise FieldError(
            f"expected {2 * n_buckets} cells for {n_buckets} buckets, got {len(cells)}"
        )
    images = []
    for b in range(n_buckets):
        u, w = cells[2 * b] % field.p, cells[2 * b + 1] % field.p
        if u == 0:
            if w != 0:
                raise CollisionDetected(
                    b, f"bucket {b} has a cancelled coefficient but nonzero payload"
                )
            continue
        image = w * field.inv(u) % field.p
        if image == 0 or bucket_of(image, salt, n_buckets) != b:
            raise CollisionDetected(
                b, f"bucket {b} ratio fails the re-hash check: distinct entities collided"
            )
        if registry is not None and image not in registry:
            raise CollisionDetected(
                b, f"bucket {b} ratio is not a registered entity image"
            )
        images.append(image)
    if len(set(images)) != len(images):
        raise CollisionDetected(-1, "duplicate image across buckets")
    return tuple(sorted(images))


@dataclass(frozen=True)
class UnionAttempt:
    """Public parameters of one union attempt, chosen by the relay."""

    attempt: int
    n_buckets: int
    salt: bytes

    def next_attempt(self, new_salt: bytes) -> "UnionAttempt":
        return UnionAttempt(
            attempt=self.attempt + 1,
            n_buckets=self.n_buckets * 2,
            salt=new_salt,
        )
