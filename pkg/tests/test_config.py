"""Deployment configuration: validation, derivation, and serialization."""

from __future__ import annotations

import json

import pytest

from embagg.config import AuditOptions, ConfigError, DeploymentConfig
from embagg.field import is_probable_prime
from embagg.masking import MODP_2048, TOY_GROUP


def valid_cfg(**overrides) -> DeploymentConfig:
    base = dict(
        n_clients=3,
        threshold=1,
        dim=2,
        rounds=1,
        seed="aa" * 32,
        insecure_crypto=True,
        paillier_bits=64,
        scale_bits=4,
    )
    base.update(overrides)
    return DeploymentConfig(**base)


def test_a_valid_config_validates_cleanly():
    assert valid_cfg().validate() == []


def test_threshold_law_is_enforced_with_the_exact_message():
    for n, t in [(3, 2), (4, 2), (5, 3), (20, 10)]:
        errs = valid_cfg(n_clients=n, threshold=t).validate()
        assert any("collusion threshold must satisfy T < N/2" in e for e in errs)
    with pytest.raises(ConfigError, match="T < N/2"):
        valid_cfg(n_clients=3, threshold=2).check()


def test_every_violation_is_reported_not_just_the_first():
    cfg = valid_cfg(n_clients=1, threshold=0, dim=-1, rounds=-5, seed="zz")
    errs = cfg.validate()
    joined = "\n".join(errs)
    assert len(errs) >= 5
    for needle in ("n_clients", "threshold", "dim", "rounds", "hex"):
        assert needle in joined


def test_toy_paillier_sizes_require_the_insecure_flag():
    errs = valid_cfg(insecure_crypto=False).validate()
    assert any("toy size" in e for e in errs)
    assert valid_cfg(paillier_bits=512, insecure_crypto=False).validate() == []


def test_paillier_no_wrap_bound_is_checked_at_config_time():
    # The relay's blinding arithmetic needs the Paillier plaintext space to
    # hold p^2 + p, so the key must have at least 2*bits(p) + 2 bits.
    cfg = valid_cfg(modulus=2_147_483_659, paillier_bits=32)
    errs = cfg.validate()
    assert any("n > p^2 + p" in e and "need at least 66" in e for e in errs)
    assert valid_cfg(modulus=2_147_483_659, paillier_bits=66).validate() == []


def test_explicit_modulus_must_be_prime_and_wide_enough():
    assert any("not prime" in e for e in valid_cfg(modulus=561).validate())
    errs = valid_cfg(modulus=17, scale_bits=8).validate()
    assert any("too small for unique decoding" in e for e in errs)


def test_entity_map_validation():
    errs = valid_cfg(entities={5: ["a"]}).validate()
    assert any("outside 1..3" in e for e in errs)
    errs = valid_cfg(entities={1: ["a", "a"]}).validate()
    assert any("duplicate entity" in e for e in errs)
    errs = valid_cfg(entities={1: [""]}).validate()
    assert any("empty or non-string" in e for e in errs)


def test_sabotage_hook_requires_audit_mode():
    cfg = valid_cfg(audit=AuditOptions(audit_mode=False, leak_raw_shares=True))
    assert any("requires audit_mode" in e for e in cfg.validate())
    ok = valid_cfg(audit=AuditOptions(audit_mode=True, leak_raw_shares=True))
    assert ok.validate() == []


def test_derivation_produces_a_consistent_bundle():
    cfg = valid_cfg()
    d = cfg.derive()
    bound = round((1 << cfg.scale_bits) * cfg.value_bound)
    assert is_probable_prime(d.field.p)
    assert d.field.p > 2 * (cfg.n_clients * bound) * cfg.n_clients
    assert d.codec.scale == 1 << cfg.scale_bits
    assert d.n_blocks == (cfg.n_clients + 1) // 2 - cfg.threshold
    assert d.dh_group is TOY_GROUP
    assert DeploymentConfig(**{**valid_cfg().__dict__, "insecure_crypto": False,
                               "paillier_bits": 512}).derive().dh_group is MODP_2048


def test_bucket_count_follows_the_capacity_hint():
    cfg = valid_cfg(entities={1: ["a", "b"], 2: ["b"], 3: ["c"]})
    assert cfg.derive().union_buckets == 4 * 3 * 3  # three distinct names
    assert valid_cfg(union_buckets=1).derive().union_buckets == 1
    assert valid_cfg(union_capacity_hint=5).derive().union_buckets == 100


def test_universe_is_the_pool_or_the_named_entities():
    assert valid_cfg(entity_pool=3).universe_entities() == ("e0", "e1", "e2")
    cfg = valid_cfg(entities={1: ["b"], 2: ["a"], 3: ["a"]})
    assert cfg.universe_entities() == ("a", "b")


def test_materialized_assignment_is_deterministic_and_exhaustive():
    cfg = valid_cfg(entity_pool=6, entity_density=0.4)
    a1 = cfg.materialize_entities()
    a2 = valid_cfg(entity_pool=6, entity_density=0.4).materialize_entities()
    assert a1 == a2
    claimed = {e for names in a1.values() for e in names}
    assert claimed == {f"e{i}" for i in range(6)}  # nothing orphaned
    assert all(names == sorted(names) for names in a1.values())


def test_initial_embeddings_live_on_the_grid_within_bounds():
    cfg = valid_cfg(dim=3)
    emb = cfg.initial_embeddings(cfg.materialize_entities())
    scale = 1 << cfg.scale_bits
    for per_client in emb.values():
        for vec in per_client.values():
            assert len(vec) == 3
            for x in vec:
                assert abs(x) <= cfg.value_bound
                assert round(x * scale) == x * scale  # exactly on the grid


def test_json_roundtrip_preserves_the_config():
    cfg = valid_cfg(entities={1: ["a"], 2: ["a"], 3: ["b"]})
    back = DeploymentConfig.from_json(cfg.to_json())
    assert back == cfg


def test_unknown_json_keys_are_rejected():
    cfg = valid_cfg()
    doc = json.loads(cfg.to_json())
    doc["n_cleints"] = 3
    with pytest.raises(ConfigError, match="n_cleints"):
        DeploymentConfig.from_dict(doc)


def test_resolve_seed_fills_and_pins_fresh_entropy():
    cfg = valid_cfg(seed=None)
    first = cfg.resolve_seed()
    assert cfg.seed is not None and len(first) == 32
    assert cfg.resolve_seed() == first  # pinned after the first draw
