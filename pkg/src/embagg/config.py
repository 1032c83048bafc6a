"""Deployment configuration: validation, derived parameters, test fixtures.

A config names everything two operators must agree on to run the same
deployment: party counts, the collusion threshold, embedding geometry, the
fixed-point codec, crypto sizes, transport/schedule choices, and the master
seed every random draw derives from.  ``validate`` returns *every* violated
constraint, not just the first; ``derive`` turns a valid config into the
concrete field, codec, and protocol parameters.
"""

from __future__ import annotations

import json
import secrets
from dataclasses import asdict, dataclass, field as dc_field
from typing import Any

from . import masking, union
from .field import Field, FixedPointCodec, default_modulus, is_probable_prime
from .poly import partition_count
from .rng import ByteSampler, derive_seed

__all__ = ["AuditOptions", "DeploymentConfig", "ConfigError", "Derived"]

TRANSPORTS = ("sim", "tcp")
SCHEDULES = ("fifo-random", "round-robin")
UPDATE_RULES = ("identity", "random-walk")


class ConfigError(ValueError):
    """Raised with the full list of violated constraints."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid config:\n  - " + "\n  - ".join(violations))
        self.violations = violations


@dataclass
class AuditOptions:
    audit_mode: bool = False
    leak_raw_shares: bool = False  # sabotage hook: skip masking, tag frames plain


@dataclass
class DeploymentConfig:
    n_clients: int
    threshold: int
    dim: int
    rounds: int = 1
    entities: dict[int, list[str]] | None = None  # explicit map, else random
    entity_pool: int = 4
    entity_density: float = 0.5
    seed: str | None = None  # hex master seed; filled with fresh entropy if unset
    scale_bits: int = 16
    value_bound: float = 1.0
    modulus: int | None = None  # field prime; derived from sizing rule if unset
    safety_factor: int = 4
    paillier_bits: int = 64
    insecure_crypto: bool = False
    transport: str = "sim"
    schedule: str = "fifo-random"
    schedule_seed: int = 0
    precompute_offline: bool = True
    union_buckets: int | None = None
    union_capacity_hint: int | None = None
    union_retry_limit: int = union.RETRY_LIMIT_DEFAULT
    update_rule: str = "identity"
    audit: AuditOptions = dc_field(default_factory=AuditOptions)

    # -- constraint checking ----------------------------------------------

    def validate(self) -> list[str]:
        """Return every violated constraint (empty list == valid)."""
        v: list[str] = []
        n, t = self.n_clients, self.threshold
        if not 2 <= n <= 0xFFFF:
            v.append(f"n_clients must be in [2, 65535], got {n}")
        if t < 1:
            v.append(f"threshold must be >= 1, got {t}")
        if n >= 2 and t >= 1:
            if 2 * t >= n:
                v.append(
                    f"collusion threshold must satisfy T < N/2 (got T={t}, N={n})"
                )
            elif (n + 1) // 2 - t < 1:
                v.append(
                    f"block count K = floor((N+1)/2) - T must be >= 1 "
                    f"(got K={(n + 1) // 2 - t})"
                )
        if self.dim < 0:
            v.append(f"dim must be >= 0, got {self.dim}")
        if self.rounds < 0:
            v.append(f"rounds must be >= 0, got {self.rounds}")
        if self.scale_bits < 0:
            v.append(f"scale_bits must be >= 0, got {self.scale_bits}")
        if not self.value_bound > 0:
            v.append(f"value_bound must be positive, got {self.value_bound}")
        if self.safety_factor < 1:
            v.append(f"safety_factor must be >= 1, got {self.safety_factor}")

        if self.paillier_bits % 2 != 0 or self.paillier_bits < 16:
            v.append(f"paillier_bits must be even and >= 16, got {self.paillier_bits}")
        if self.paillier_bits < 512 and not self.insecure_crypto:
            v.append(
                f"paillier_bits={self.paillier_bits} is a toy size; "
                f"set insecure_crypto to accept it"
            )

        int_bound = self._int_bound()
        if int_bound < 1:
            v.append("value_bound quantizes to zero at this scale; raise one of them")
        p = self.modulus
        if p is not None:
            if not is_probable_prime(p):
                v.append(f"modulus {p} is not prime")
            elif n >= 2 and int_bound >= 1 and 2 * (n * int_bound) * n >= p:
                v.append(
                    f"modulus {p} too small for unique decoding: "
                    f"need p > 2*N^2*B = {2 * n * n * int_bound}"
                )
        if p is None and n >= 2 and int_bound >= 1:
            p = default_modulus(n, int_bound, self.safety_factor)
        if p is not None and n >= 2 and t >= 1 and 2 * t < n:
            k = (n + 1) // 2 - t
            if k >= 1 and p <= k + t + n:
                v.append(
                    f"modulus {p} leaves no room for {k + t} code nodes plus "
                    f"{n} client nodes"
                )
            # Relay blinding must never wrap in the Paillier plaintext space.
            if self.paillier_bits < 2 * p.bit_length() + 2:
                v.append(
                    f"paillier_bits={self.paillier_bits} cannot guarantee "
                    f"n > p^2 + p for modulus of {p.bit_length()} bits; "
                    f"need at least {2 * p.bit_length() + 2}"
                )

        if self.transport not in TRANSPORTS:
            v.append(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.schedule not in SCHEDULES:
            v.append(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.update_rule not in UPDATE_RULES:
            v.append(
                f"update_rule must be one of {UPDATE_RULES}, got {self.update_rule!r}"
            )

        if self.entities is not None:
            for cid, names in self.entities.items():
                if not 1 <= int(cid) <= n:
                    v.append(f"entities map names client {cid}, outside 1..{n}")
                if len(set(names)) != len(names):
                    v.append(f"client {cid} lists a duplicate entity")
                if any(not isinstance(e, str) or not e for e in names):
                    v.append(f"client {cid} lists an empty or non-string entity id")
        else:
            if self.entity_pool < 1:
                v.append(f"entity_pool must be >= 1, got {self.entity_pool}")
            if not 0 < self.entity_density <= 1:
                v.append(
                    f"entity_density must be in (0, 1], got {self.entity_density}"
                )

        if self.union_buckets is not None and self.union_buckets < 1:
            v.append(f"union_buckets must be >= 1, got {self.union_buckets}")
        if self.union_capacity_hint is not None and self.union_capacity_hint < 1:
            v.append(
                f"union_capacity_hint must be >= 1, got {self.union_capacity_hint}"
            )
        if self.union_retry_limit < 1:
            v.append(f"union_retry_limit must be >= 1, got {self.union_retry_limit}")

        if self.audit.leak_raw_shares and not self.audit.audit_mode:
            v.append("leak_raw_shares is a sabotage hook; it requires audit_mode")
        if self.seed is not None:
            try:
                bytes.fromhex(self.seed)
            except ValueError:
                v.append(f"seed must be a hex string, got {self.seed!r}")
        return v

    def check(self) -> None:
        violations = self.validate()
        if violations:
            raise ConfigError(violations)

    # -- derivations -------------------------------------------------------

    def _int_bound(self) -> int:
        return round((1 << self.scale_bits) * self.value_bound)

    def resolve_seed(self) -> bytes:
        """Master seed bytes; draws and records fresh entropy when unset."""
        if self.seed is None:
            self.seed = secrets.token_bytes(32).hex()
        return bytes.fromhex(self.seed)

    def derive(self) -> "Derived":
        self.check()
        int_bound = self._int_bound()
        p = self.modulus or default_modulus(
            self.n_clients, int_bound, self.safety_factor
        )
        fld = Field(p)
        codec = FixedPointCodec(scale=1 << self.scale_bits, int_bound=int_bound)
        k = partition_count(self.n_clients, self.threshold)
        hint = self.union_capacity_hint
        if hint is None:
            hint = (
                len({e for names in self.entities.values() for e in names})
                if self.entities
                else self.entity_pool
            ) or 1
        buckets = self.union_buckets or union.initial_bucket_count(hint)
        group = masking.TOY_GROUP if self.insecure_crypto else masking.MODP_2048
        return Derived(
            field=fld,
            codec=codec,
            n_blocks=k,
            union_buckets=buckets,
            dh_group=group,
            master_seed=self.resolve_seed(),
        )

    def universe_entities(self) -> tuple[str, ...]:
        """Public registry of registrable entity names.

        Every party knows which names *could* occur — ownership is what
        stays private.  Explicit maps register exactly the names they
        mention; pool mode registers the whole pool, whatever the seeded
        assignment later picks.
        """
        if self.entities is not None:
            return tuple(sorted({e for names in self.entities.values() for e in names}))
        return tuple(f"e{i}" for i in range(self.entity_pool))

    def materialize_entities(self) -> dict[int, list[str]]:
        """Per-client entity lists, canonical (sorted) order per client.

        Explicit maps are used as given; otherwise assignment is drawn from
        the master seed: each pool entity goes to each client with the
        configured density, and an unclaimed entity is assigned one seeded
        owner so the pool is exhaustive.
        """
        if self.entities is not None:
            return {
                int(cid): sorted(names) for cid, names in self.entities.items()
            }
        sampler = ByteSampler(derive_seed(self.resolve_seed(), "entity-assign"))
        out: dict[int, list[str]] = {cid: [] for cid in range(1, self.n_clients + 1)}
        cut = round(self.entity_density * (1 << 32))
        for i in range(self.entity_pool):
            name = f"e{i}"
            owners = [
                cid
                for cid in range(1, self.n_clients + 1)
                if sampler.int_below(1 << 32) < cut
            ]
            if not owners:
                owners = [1 + sampler.int_below(self.n_clients)]
            for cid in owners:
                out[cid].append(name)
        return {cid: sorted(names) for cid, names in out.items()}

    def initial_embeddings(
        self, assignment: dict[int, list[str]]
    ) -> dict[int, dict[str, list[float]]]:
        """Seeded starting embeddings on the quantized grid, within bounds."""
        scale = 1 << self.scale_bits
        bound = self._int_bound()
        out: dict[int, dict[str, list[float]]] = {}
        for cid in sorted(assignment):
            sampler = ByteSampler(
                derive_seed(self.resolve_seed(), "init-embedding", cid)
            )
            out[cid] = {}
            for name in assignment[cid]:
                qs = [
                    sampler.int_below(2 * bound + 1) - bound for _ in range(self.dim)
                ]
                out[cid][name] = [q / scale for q in qs]
        return out

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        d = asdict(self)
        if d.get("entities"):
            d["entities"] = {str(k): v for k, v in d["entities"].items()}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DeploymentConfig":
        d = dict(d)
        audit = d.pop("audit", None)
        entities = d.pop("entities", None)
        known = {f for f in cls.__dataclass_fields__ if f not in ("audit", "entities")}
        unknown = set(d) - known
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in sorted(unknown)])
        cfg = cls(**d)
        if audit is not None:
            cfg.audit = AuditOptions(**audit)
        if entities is not None:
            cfg.entities = {int(k): list(v) for k, v in entities.items()}
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "DeploymentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
        if not isinstance(raw, dict):
            raise ConfigError(["config JSON must be an object"])
        return cls.from_dict(raw)


@dataclass(frozen=True)
class Derived:
    field: Field
    codec: FixedPointCodec
    n_blocks: int
    union_buckets: int
    dh_group: masking.DhGroup
    master_seed: bytes
