"""Pairwise key agreement and one-time-pad channel masking."""

from __future__ import annotations

import random

import pytest

from embagg.field import Field
from embagg.masking import (
    MODP_2048,
    TOY_GROUP,
    DhKeyPair,
    MaskingError,
    PadReuseGuard,
    PadStream,
    agree_master,
    otp_mask,
    otp_unmask,
    pad_seed,
)
from embagg.rng import ByteSampler, derive_seed


def test_key_agreement_matches_a_direct_modexp_oracle():
    group = TOY_GROUP
    a = DhKeyPair.generate(group, ByteSampler(b"\x11" * 32))
    b = DhKeyPair.generate(group, ByteSampler(b"\x12" * 32))
    assert a.public == pow(group.generator, a.secret, group.modulus)
    shared = pow(b.public, a.secret, group.modulus)
    expect = derive_seed(shared.to_bytes(group.elem_bytes, "big"), "dh-master")
    assert agree_master(a, b.public) == expect


def test_key_agreement_is_symmetric_and_pair_specific():
    group = TOY_GROUP
    keys = [
        DhKeyPair.generate(group, ByteSampler(bytes([i]) * 32)) for i in range(1, 4)
    ]
    m01 = agree_master(keys[0], keys[1].public)
    assert m01 == agree_master(keys[1], keys[0].public)
    assert m01 != agree_master(keys[0], keys[2].public)


def test_degenerate_peer_values_are_rejected():
    a = DhKeyPair.generate(TOY_GROUP, ByteSampler(b"\x13" * 32))
    for bad in (0, 1, TOY_GROUP.modulus - 1, TOY_GROUP.modulus):
        with pytest.raises(MaskingError, match="degenerate"):
            agree_master(a, bad)


def test_production_group_is_the_2048_bit_standard_one():
    assert MODP_2048.modulus.bit_length() == 2048
    assert MODP_2048.generator == 2
    assert not MODP_2048.insecure
    assert TOY_GROUP.insecure


def test_pad_seeds_separate_every_coordinate_of_the_context():
    master = b"m" * 32
    base = pad_seed(master, "share", 1, 2, 3)
    assert base == pad_seed(master, "share", 1, 2, 3)
    assert base != pad_seed(master, "query", 1, 2, 3)
    assert base != pad_seed(master, "share", 2, 2, 3)
    assert base != pad_seed(master, "share", 1, 3, 3)
    assert base != pad_seed(master, "share", 1, 2, 4)
    assert base != pad_seed(b"n" * 32, "share", 1, 2, 3)
    with pytest.raises(MaskingError, match="purpose"):
        pad_seed(master, "shares", 1, 2, 3)


def test_mask_then_unmask_is_the_identity():
    field = Field(1009)
    rng = random.Random(0x31)
    for trial in range(50):
        seed = derive_seed(b"p" * 32, "pad-roundtrip", trial)
        payload = tuple(rng.randrange(field.p) for _ in range(rng.randrange(1, 9)))
        masked = otp_mask(field, payload, PadStream(seed, field))
        assert masked != payload or len(payload) == 0  # 1009^-len chance ignored
        assert otp_unmask(field, masked, PadStream(seed, field)) == payload


def test_pad_stream_walks_identically_on_both_ends():
    field = Field(17)
    seed = derive_seed(b"p" * 32, "walk")
    a, b = PadStream(seed, field), PadStream(seed, field)
    assert a.next_vec(10) == tuple(b.next_element() for _ in range(10))
    assert a.drawn == b.drawn == 10
    # a fresh stream from another seed diverges
    assert PadStream(seed, field).next_vec(10) != PadStream(
        derive_seed(b"p" * 32, "walk2"), field
    ).next_vec(10)


def test_pad_elements_cover_the_field_roughly_uniformly():
    field = Field(17)
    stream = PadStream(derive_seed(b"p" * 32, "uniform"), field)
    counts = [0] * field.p
    n_draws = 17 * 400
    for _ in range(n_draws):
        counts[stream.next_element()] += 1
    for c in counts:
        assert abs(c - 400) < 100


def test_reuse_guard_flags_a_second_claim():
    guard = PadReuseGuard()
    seed = pad_seed(b"m" * 32, "share", 0, 1, 2)
    guard.claim(seed)
    guard.claim(pad_seed(b"m" * 32, "share", 0, 1, 3))
    with pytest.raises(MaskingError, match="twice"):
        guard.claim(seed)
