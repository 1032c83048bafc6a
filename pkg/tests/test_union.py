"""Private entity-union over salted annihilator tables."""

from __future__ import annotations

import random

import pytest

from embagg.field import Field, FieldError
from embagg.rng import ByteSampler, derive_seed
from embagg.union import (
    CollisionDetected,
    UnionAttempt,
    additive_split,
    bucket_of,
    build_contribution,
    combine_tables,
    entity_image,
    extract_union,
    initial_bucket_count,
)

FIELD = Field(2_147_483_659)  # first prime above 2^31


def test_entity_images_are_nonzero_deterministic_and_distinct():
    names = [f"user-{i}" for i in range(200)] + ["", "用户", "a b c"]
    images = [entity_image(n, FIELD) for n in names]
    assert all(0 < x < FIELD.p for x in images)
    assert images == [entity_image(n, FIELD) for n in names]
    assert len(set(images)) == len(images)
    # small fields force the nonzero retry path often; still never zero
    small = Field(17)
    assert all(0 < entity_image(f"e{i}", small) < 17 for i in range(300))


def test_bucket_map_is_salt_dependent_and_in_range():
    salts = [b"\x00" * 8, b"\x01" * 8]
    hits = {s: set() for s in salts}
    for i in range(100):
        image = entity_image(f"e{i}", FIELD)
        for s in salts:
            b = bucket_of(image, s, 16)
            assert 0 <= b < 16
            hits[s].add((image, b))
    assert hits[salts[0]] != {(i, bucket_of(i, salts[1], 16)) for i, _ in hits[salts[0]]}
    with pytest.raises(FieldError):
        bucket_of(1, b"s", 0)


def test_initial_bucket_count_has_birthday_headroom():
    assert initial_bucket_count(1) == 8
    assert initial_bucket_count(5) == 100
    assert initial_bucket_count(10) == 400
    with pytest.raises(FieldError):
        initial_bucket_count(0)


def test_contribution_cells_encode_annihilator_and_image_product():
    # With one bucket the layout collapses to (sum rho_i, sum rho_i * h_i).
    p = FIELD.p
    images = [entity_image("a", FIELD), entity_image("b", FIELD)]
    sampler = ByteSampler(derive_seed(b"u" * 32, "rho"))
    cells = build_contribution(images, FIELD, 1, b"\x00" * 8, sampler)
    replay = ByteSampler(derive_seed(b"u" * 32, "rho"))
    rhos = [replay.nonzero_below(p) for _ in images]
    assert cells == (
        sum(rhos) % p,
        sum(r * h for r, h in zip(rhos, images)) % p,
    )
    with pytest.raises(FieldError, match="nonzero field element"):
        build_contribution([0], FIELD, 1, b"\x00" * 8, sampler)


def test_additive_shares_sum_back_to_the_vector():
    rng = random.Random(0x41)
    for _ in range(50):
        vec = tuple(rng.randrange(FIELD.p) for _ in range(rng.randrange(1, 8)))
        n = rng.randrange(2, 6)
        shares = additive_split(
            FIELD, vec, n, ByteSampler(derive_seed(b"u" * 32, "split", _))
        )
        assert len(shares) == n
        assert combine_tables(FIELD, shares) == vec
    with pytest.raises(FieldError):
        additive_split(FIELD, (1,), 0, ByteSampler(b"\x01" * 32))
    with pytest.raises(FieldError):
        combine_tables(FIELD, [])
    with pytest.raises(FieldError, match="length mismatch"):
        combine_tables(FIELD, [(1, 2), (3,)])


def test_end_to_end_union_matches_a_set_oracle():
    # 200 random multi-client instances: combined tables must extract to
    # exactly the sorted union of everyone's entity images.
    rng = random.Random(0x42)
    successes = collisions = 0
    for trial in range(200):
        n_clients = rng.randrange(2, 6)
        pool = [f"entity-{i}" for i in range(rng.randrange(1, 9))]
        registry = frozenset(entity_image(e, FIELD) for e in pool)
        owned = [
            sorted(rng.sample(pool, rng.randrange(0, len(pool) + 1)))
            for _ in range(n_clients)
        ]
        union_images = sorted(
            {entity_image(e, FIELD) for names in owned for e in names}
        )
        attempt = UnionAttempt(
            attempt=0,
            n_buckets=initial_bucket_count(len(pool)),
            salt=derive_seed(b"s" * 32, "salt", trial)[:8],
        )
        tables = [
            build_contribution(
                [entity_image(e, FIELD) for e in names],
                FIELD,
                attempt.n_buckets,
                attempt.salt,
                ByteSampler(derive_seed(b"u" * 32, "contrib", trial, cid)),
            )
            for cid, names in enumerate(owned)
        ]
        # route every table through additive shares, as the protocol does
        shared = [
            additive_split(
                FIELD, t, n_clients, ByteSampler(derive_seed(b"u" * 32, "sp", trial, i))
            )
            for i, t in enumerate(tables)
        ]
        partials = [
            combine_tables(FIELD, [shared[i][v] for i in range(n_clients)])
            for v in range(n_clients)
        ]
        combined = combine_tables(FIELD, partials)
        try:
            got = extract_union(
                combined, FIELD, attempt.salt, attempt.n_buckets, registry=registry
            )
        except CollisionDetected:
            collisions += 1  # same-bucket birthday hit; retried in the protocol
            continue
        assert list(got) == union_images
        successes += 1
    assert successes + collisions == 200
    assert successes >= 150  # ~1/8 collision odds at 4*pool^2 buckets


def test_single_bucket_collision_is_caught_by_the_registry():
    # With one bucket the re-hash check is vacuous (everything hashes to
    # bucket 0), so the merged ratio slips through it — the registry check
    # is what detects the pile-up.
    a, b = entity_image("a", FIELD), entity_image("b", FIELD)
    sampler = ByteSampler(derive_seed(b"u" * 32, "collide"))
    cells = build_contribution([a, b], FIELD, 1, b"\x00" * 8, sampler)
    with pytest.raises(CollisionDetected, match="not a registered"):
        extract_union(cells, FIELD, b"\x00" * 8, 1, registry=frozenset({a, b}))
    # an honest single-entity bucket still passes the registry check
    solo = build_contribution([a], FIELD, 1, b"\x00" * 8, sampler)
    assert extract_union(solo, FIELD, b"\x00" * 8, 1, registry=frozenset({a, b})) == (a,)


def test_cancelled_coefficient_with_live_payload_is_detected():
    # U = 0 but W != 0 cannot come from a consistent single-entity bucket.
    with pytest.raises(CollisionDetected, match="cancelled"):
        extract_union((0, 5), FIELD, b"\x00" * 8, 1)


def test_rehash_mismatch_across_buckets_is_detected():
    # Plant a valid-looking ratio in the wrong bucket: rejected by re-hash.
    image = entity_image("a", FIELD)
    home = bucket_of(image, b"\x00" * 8, 4)
    wrong = (home + 1) % 4
    cells = [0] * 8
    cells[2 * wrong] = 3
    cells[2 * wrong + 1] = 3 * image % FIELD.p
    with pytest.raises(CollisionDetected, match="re-hash"):
        extract_union(tuple(cells), FIELD, b"\x00" * 8, 4)


def test_extraction_validates_cell_count():
    with pytest.raises(FieldError, match="cells"):
        extract_union((0, 0, 0), FIELD, b"\x00" * 8, 2)


def test_retry_doubles_the_table_and_replaces_the_salt():
    first = UnionAttempt(attempt=0, n_buckets=8, salt=b"\x00" * 8)
    second = first.next_attempt(b"\x01" * 8)
    assert (second.attempt, second.n_buckets, second.salt) == (1, 16, b"\x01" * 8)
