"""Desk-scale privacy audits: exhaustive view-distribution enumeration.

The protocol's privacy claims are distributional: the messages a bounded
coalition sees must have *identical* distributions under any two ownership
configurations that agree on the coalition's own inputs, the entity union,
and the per-entity aggregates.  At deployment scale that is a proof
obligation; at desk scale it is checkable by brute force.  This module
enumerates the entire randomness space of tiny instances — every noise
value, every blinding draw — and compares exact occurrence counts (integers,
never floats, never sampling) between scenario pairs.

Audits included:

* share-view audit — the shares a coalition receives;
* query-view audit — the query vectors a coalition receives;
* full-round audit — shares plus the coalition's own blinded responses,
  jointly, combined with the query marginal (the two parts consume disjoint
  independent randomness, so their product is the full view distribution);
* a negative control with T+1 colluders, which must be distinguishable;
* count-opacity audit — the relay's response blinding makes any two
  (sum, count) pairs with equal averages produce identical views.

Scale limits are enforced by an explicit budget; oversized requests fail
with the parameter that must shrink.  Embedding dimension is fixed at 0 in
scenario audits: every value coordinate rides an independent copy of the
same per-coordinate polynomial mechanism with its own fresh noise, so the
ownership-bit instance is the binding one.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as iter_product
from typing import Any, Iterable, Sequence

from .field import Field
from .poly import ProtocolParams, blind_poly_evals, lagrange_weights
from .union import combine_tables, entity_image
from .transport import (
    KIND_CIPHERTEXT,
    KIND_MASKED,
    KIND_PUBLIC,
    MsgType,
    TranscriptEntry,
)

__all__ = [
    "AuditError",
    "AuditInfeasible",
    "EnumerationBudget",
    "AuditReport",
    "Scenario",
    "ScenarioPair",
    "canonical_pair",
    "overpowered_pair",
    "check_conditioning",
    "audit_share_privacy",
    "audit_query_privacy",
    "audit_full_round",
    "audit_count_opacity",
    "independence_test",
    "audit_union_hiding",
    "run_privacy_audits",
    "AdversaryView",
    "capture_view",
    "server_payload_audit",
    "EXPECTED_KINDS",
]


class AuditError(RuntimeError):
    """An audit was asked to check an ill-posed scenario pair."""


class AuditInfeasible(AuditError):
    """The requested enumeration exceeds the desk-scale budget."""


@dataclass(frozen=True)
class EnumerationBudget:
    max_draws: int = 5_000_000

    def check(self, name: str, draws: int, knob: str) -> None:
        if draws > self.max_draws:
            raise AuditInfeasible(
                f"audit {name!r} needs {draws} draws, over the budget of "
                f"{self.max_draws}; shrink {knob}"
            )


@dataclass(frozen=True)
class AuditReport:
    name: str
    field_p: int
    draws: int
    expect: str  # "same" or "different"
    same: bool
    ok: bool
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "field_p": self.field_p,
            "draws": self.draws,
            "expect": self.expect,
            "distributions_equal": self.same,
            "verdict": "pass" if self.ok else "FAIL",
            "detail": self.detail,
        }


# -- scenarios ---------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """One ownership configuration: client id -> owned entity indices."""

    owners: dict[int, frozenset[int]]

    def count(self, m: int) -> int:
        return sum(1 for owned in self.owners.values() if m in owned)


@dataclass(frozen=True)
class ScenarioPair:
    """Two configurations an audited coalition must not tell apart."""

    p: int
    n_clients: int
    threshold: int
    n_entities: int
    corrupt: frozenset[int]
    a: Scenario
    b: Scenario

    @property
    def honest(self) -> list[int]:
        return [n for n in range(1, self.n_clients + 1) if n not in self.corrupt]

    def params(self) -> ProtocolParams:
        return ProtocolParams.build(
            Field(self.p),
            self.n_clients,
            self.threshold,
            n_entities=self.n_entities,
            dim=0,
        )


def canonical_pair(p: int = 17) -> ScenarioPair:
    """N=3, T=1, two entities; the two honest clients swap ownership.

    Client 1 (the coalition) owns entity 0 in both scenarios, so the union,
    the coalition's inputs, and every per-entity owner count agree; only
    *which* honest client owns which entity differs.
    """
    return ScenarioPair(
        p=p,
        n_clients=3,
        threshold=1,
        n_entities=2,
        corrupt=frozenset({1}),
        a=Scenario({1: frozenset({0}), 2: frozenset({0}), 3: frozenset({1})}),
        b=Scenario({1: frozenset({0}), 2: frozenset({1}), 3: frozenset({0})}),
    )


def overpowered_pair(p: int = 17) -> ScenarioPair:
    """Negative control: T+1 = 2 colluders watching the lone honest client.

    Clients 1 and 2 collude (T=1, so one too many); honest client 3 owns
    entity 0 in one scenario, entity 1 in the other.  Two views of a
    degree-(K+T-1) share polynomial with a single noise value pin the
    polynomial down, so the share audit must find the distributions
    *distinguishable* — evidence the positive audits bind at exactly T.
    """
    return ScenarioPair(
        p=p,
        n_clients=3,
        threshold=1,
        n_entities=2,
        corrupt=frozenset({1, 2}),
        a=Scenario({1: frozenset({0, 1}), 2: frozenset(), 3: frozenset({0})}),
        b=Scenario({1: frozenset({0, 1}), 2: frozenset(), 3: frozenset({1})}),
    )


def check_conditioning(pair: ScenarioPair, positive: bool = True) -> None:
    """Reject ill-posed pairs before any enumeration runs.

    Every pair must agree on what privacy cannot hide: the coalition's own
    entity sets and the realized union.  A *positive* pair (expected
    indistinguishable) must additionally agree on every per-entity owner
    count — aggregates are the published output — and must not contain an
    entity owned only by colluders, whose aggregate would be trivially the
    coalition's own data.  Negative controls skip those two conditions;
    they exist to demonstrate distinguishability.
    """
    for scenario in (pair.a, pair.b):
        if set(scenario.owners) != set(range(1, pair.n_clients + 1)):
            raise AuditError("scenario must assign an entity set to every client")
        for owned in scenario.owners.values():
            if any(not 0 <= m < pair.n_entities for m in owned):
                raise AuditError("entity index out of range in scenario")
    for c in pair.corrupt:
        if pair.a.owners[c] != pair.b.owners[c]:
            raise AuditError(f"colluding client {c} changes inputs between scenarios")
    union_a = {m for owned in pair.a.owners.values() for m in owned}
    union_b = {m for owned in pair.b.owners.values() for m in owned}
    if union_a != union_b or union_a != set(range(pair.n_entities)):
        raise AuditError("scenarios must realize the same full entity union")
    if positive:
        for scenario in (pair.a, pair.b):
            for m in range(pair.n_entities):
                if all(m not in scenario.owners[n] for n in pair.honest):
                    raise AuditError(
                        f"entity {m} is owned only by colluders in one scenario"
                    )
        for m in range(pair.n_entities):
            if pair.a.count(m) != pair.b.count(m):
                raise AuditError(
                    f"entity {m} has different owner counts across scenarios"
                )


# -- enumeration helpers -----------------------------------------------------


def _share_affine(
    params: ProtocolParams, at_node: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split a share evaluation into data weights and noise weights.

    share(x) = sum_i dw[i] * data_i + sum_t nw[t] * noise_t   (block_len = 1)
    """
    xs = params.points.code_nodes
    ws = lagrange_weights(params.field, xs, at_node)
    k = params.n_blocks
    return ws[:k], ws[k:]


def _bit_blocks(params: ProtocolParams, owned: bool) -> tuple[int, ...]:
    """Data values of the K blocks for a dim-0 expansion: (0,...,0,bit)."""
    return tuple([0] * (params.n_blocks - 1) + [1 if owned else 0])


def _view_counts_equal(
    counts_a: dict[tuple, int], counts_b: dict[tuple, int]
) -> bool:
    return counts_a == counts_b


# -- share-view audit --------------------------------------------------------


def audit_share_privacy(
    pair: ScenarioPair,
    budget: EnumerationBudget | None = None,
    expect: str = "same",
    name: str = "share-view",
) -> AuditReport:
    """Enumerate honest share noise; compare coalition share views exactly.

    The coalition sees, for every honest sender n and entity m, the share
    polynomial of n's expansion of m evaluated at each colluding client's
    node.  All T noise values per (n, m) range over the whole field.
    """
    check_conditioning(pair, positive=(expect == "same"))
    budget = budget or EnumerationBudget()
    params = pair.params()
    if params.block_len != 1:
        raise AuditError("scenario audits require dim 0 (block length 1)")
    p = params.field.p
    t = params.threshold
    honest = pair.honest
    corrupt = sorted(pair.corrupt)
    n_vars = len(honest) * pair.n_entities * t
    draws = p**n_vars
    budget.check(name, draws, "the field, the client count, or the entity count")

    noise_w = {c: _share_affine(params, params.points.client_nodes[c - 1])[1] for c in corrupt}
    data_w = {c: _share_affine(params, params.points.client_nodes[c - 1])[0] for c in corrupt}

    def distribution(scenario: Scenario) -> dict[tuple, int]:
        consts = {}
        for n in honest:
            for m in range(pair.n_entities):
                data = _bit_blocks(params, m in scenario.owners[n])
                for c in corrupt:
                    consts[(n, m, c)] = (
                        sum(w * d for w, d in zip(data_w[c], data)) % p
                    )
        counts: dict[tuple, int] = {}
        slots = [(n, m) for n in honest for m in range(pair.n_entities)]
        for assign in iter_product(range(p), repeat=n_vars):
            view = []
            for idx, (n, m) in enumerate(slots):
                zs = assign[idx * t : (idx + 1) * t]
                for c in corrupt:
                    val = consts[(n, m, c)]
                    for w, z in zip(noise_w[c], zs):
                        val = (val + w * z) % p
                    view.append(val)
            key = tuple(view)
            counts[key] = counts.get(key, 0) + 1
        return counts

    same = _view_counts_equal(distribution(pair.a), distribution(pair.b))
    return AuditReport(
        name=name,
        field_p=p,
        draws=draws,
        expect=expect,
        same=same,
        ok=same == (expect == "same"),
        detail=f"{len(honest)} honest senders x {pair.n_entities} entities x T={t} noises",
    )


# -- query-view audit --------------------------------------------------------


def audit_query_privacy(
    pair: ScenarioPair,
    budget: EnumerationBudget | None = None,
    expect: str = "same",
    name: str = "query-view",
) -> AuditReport:
    """Enumerate honest query noise; compare coalition query views exactly.

    Every honest client sends one query per owned entity; coordinate m of a
    query share is a selector polynomial (1 at data nodes iff m is the
    target) evaluated at the colluder's node, plus T fresh noises.
    """
    check_conditioning(pair, positive=(expect == "same"))
    budget = budget or EnumerationBudget()
    params = pair.params()
    p = params.field.p
    t = params.threshold
    honest = pair.honest
    corrupt = sorted(pair.corrupt)

    def slot_list(scenario: Scenario) -> list[tuple[int, int]]:
        out = []
        for n in honest:
            for target in sorted(scenario.owners[n]):
                out.append((n, target))
        return out

    if len(slot_list(pair.a)) != len(slot_list(pair.b)):
        raise AuditError("scenarios announce different slot counts")
    n_slots = len(slot_list(pair.a))
    n_vars = n_slots * pair.n_entities * t
    draws = p**n_vars
    budget.check(name, draws, "the field, the slot count, or the entity count")

    sel_w = {}
    for c in corrupt:
        node = params.points.client_nodes[c - 1]
        dw, nw = _share_affine(params, node)
        sel_w[c] = (sum(dw) % p, nw)  # selector data part: bit * sum(dw)

    def distribution(scenario: Scenario) -> dict[tuple, int]:
        slots = slot_list(scenario)
        counts: dict[tuple, int] = {}
        for assign in iter_product(range(p), repeat=n_vars):
            view = []
            for idx, (n, target) in enumerate(slots):
                base = idx * pair.n_entities * t
                for m in range(pair.n_entities):
                    zs = assign[base + m * t : base + (m + 1) * t]
                    bit = 1 if m == target else 0
                    for c in corrupt:
                        bit_part, nw = sel_w[c]
                        val = (bit * bit_part) % p
                        for w, z in zip(nw, zs):
                            val = (val + w * z) % p
                        view.append(val)
            key = tuple(view)
            counts[key] = counts.get(key, 0) + 1
        return counts

    same = _view_counts_equal(distribution(pair.a), distribution(pair.b))
    return AuditReport(
        name=name,
        field_p=p,
        draws=draws,
        expect=expect,
        same=same,
        ok=same == (expect == "same"),
        detail=f"{n_slots} honest slots x {pair.n_entities} selector coords x T={t} noises",
    )


# -- full-round audit --------------------------------------------------------


def audit_full_round(
    pair: ScenarioPair,
    budget: EnumerationBudget | None = None,
    name: str = "full-round",
) -> AuditReport:
    """Joint audit of everything the coalition sees in one retrieval round.

    The coalition's round view splits into two components driven by
    *disjoint* independent randomness:

    * honest query noise -> the query vectors it receives (audited as a
      marginal by :func:`audit_query_privacy` at the same field size);
    * honest share noise + the relay's blinding draws -> the shares it
      receives and the blinded responses to its own queries, enumerated
      jointly here.

    Since the joint distribution is the product of the two components, both
    marginals matching exactly certifies the whole round view.  The second
    component covers the decode path end to end: response curves carry the
    relay's secret scale factor r and its blinding polynomial.
    """
    check_conditioning(pair)
    budget = budget or EnumerationBudget()
    if len(pair.corrupt) != 1:
        raise AuditError("the full-round audit drives a single colluding querier")
    params = pair.params()
    if params.block_len != 1:
        raise AuditError("scenario audits require dim 0 (block length 1)")
    p = params.field.p
    t = params.threshold
    honest = pair.honest
    (corrupt_id,) = pair.corrupt
    corrupt_slots = sorted(pair.a.owners[corrupt_id])
    if not corrupt_slots:
        raise AuditError("the colluding client must own at least one entity to query")

    n_z = len(honest) * pair.n_entities * t
    n_sigma = params.n_blind_noises * len(corrupt_slots)
    draws = p ** (n_z + n_sigma) * (p - 1) ** len(corrupt_slots)
    budget.check(name, draws, "the field size (a smaller prime still fits the node layout)")

    query_part = audit_query_privacy(pair, budget, name=f"{name}/query-marginal")

    # Affine structure, precomputed once per scenario:
    #   share_{n,m}(node_c)            = const + <noise_w, z_{n,m}>
    #   response_v for corrupt slot s  = r * F_s(node_v) + psi_s(node_v)
    #   F_s(node_v) = sum_m chi_{s,m}(node_v) * phi_m(node_v)
    #   phi_m(node_v) = <data of all owners> + <noise weights, sum_n z_{n,m}>
    corrupt_node = params.points.client_nodes[corrupt_id - 1]
    dw_c, nw_c = _share_affine(params, corrupt_node)

    # colluder's own selector polynomials (its query noise fixed to zero:
    # conditioning fixes the coalition's randomness, any value works)
    chi = {}
    for s in corrupt_slots:
        for v in range(1, pair.n_clients + 1):
            node = params.points.client_nodes[v - 1]
            dw, _nw = _share_affine(params, node)
            for m in range(pair.n_entities):
                bit = 1 if m == s else 0
                chi[(s, m, v)] = (bit * sum(dw)) % p

    # blinding polynomial: psi(node_v) = sum_j W[v][j] * sigma_j  (no constant)
    blind_w: list[list[int]] = []
    for j in range(params.n_blind_noises):
        unit = [
            tuple([1 if jj == j else 0]) for jj in range(params.n_blind_noises)
        ]
        evals = blind_poly_evals(params, unit)
        blind_w.append([e[0] for e in evals])

    def distribution(scenario: Scenario) -> dict[tuple, int]:
        # per-entity data constants of phi_m at every client node
        phi_const = {}
        share_const = {}
        for m in range(pair.n_entities):
            total = [0] * params.n_blocks
            for n in range(1, pair.n_clients + 1):
                data = _bit_blocks(params, m in scenario.owners[n])
                for i, d in enumerate(data):
                    total[i] = (total[i] + d) % p
            for v in range(1, pair.n_clients + 1):
                node = params.points.client_nodes[v - 1]
                dw, _ = _share_affine(params, node)
                phi_const[(m, v)] = sum(w * d for w, d in zip(dw, total)) % p
        for n in honest:
            for m in range(pair.n_entities):
                data = _bit_blocks(params, m in scenario.owners[n])
                share_const[(n, m)] = sum(w * d for w, d in zip(dw_c, data)) % p

        # noise weights of phi_m at node v (same for every m)
        noise_at = {
            v: _share_affine(params, params.points.client_nodes[v - 1])[1]
            for v in range(1, pair.n_clients + 1)
        }

        slots_z = [(n, m) for n in honest for m in range(pair.n_entities)]
        counts: dict[tuple, int] = {}
        sigma_space = list(iter_product(range(p), repeat=n_sigma))
        for assign in iter_product(range(p), repeat=n_z):
            share_view = []
            z_sum = [[0] * t for _ in range(pair.n_entities)]
            for idx, (n, m) in enumerate(slots_z):
                zs = assign[idx * t : (idx + 1) * t]
                val = share_const[(n, m)]
                for w, z in zip(nw_c, zs):
                    val = (val + w * z) % p
                share_view.append(val)
                for tt in range(t):
                    z_sum[m][tt] = (z_sum[m][tt] + zs[tt]) % p
            share_view_t = tuple(share_view)
            # F_s at every client node for this z assignment
            f_vals = []
            for s in corrupt_slots:
                per_v = []
                for v in range(1, pair.n_clients + 1):
                    acc = 0
                    nz = noise_at[v]
                    for m in range(pair.n_entities):
                        phi = phi_const[(m, v)]
                        for w, z in zip(nz, z_sum[m]):
                            phi = (phi + w * z) % p
                        acc = (acc + chi[(s, m, v)] * phi) % p
                    per_v.append(acc)
                f_vals.append(per_v)
            for r in range(1, p):
                rf = [[(r * fv) % p for fv in per_v] for per_v in f_vals]
                for sigmas in sigma_space:
                    resp = []
                    for si, per_v in enumerate(rf):
                        base = si * params.n_blind_noises
                        sl = sigmas[base : base + params.n_blind_noises]
                        for v in range(1, pair.n_clients + 1):
                            val = per_v[v - 1]
                            wv = blind_w
                            for j in range(params.n_blind_noises):
                                val = (val + wv[j][v - 1] * sl[j]) % p
                            resp.append(val)
                    key = share_view_t + tuple(resp)
                    counts[key] = counts.get(key, 0) + 1
        return counts

    same = _view_counts_equal(distribution(pair.a), distribution(pair.b))
    ok = same and query_part.ok
    return AuditReport(
        name=name,
        field_p=p,
        draws=draws + query_part.draws,
        expect="same",
        same=same and query_part.same,
        ok=ok,
        detail=(
            f"joint shares+responses over {draws} draws, "
            f"query marginal over {query_part.draws}"
        ),
    )


# -- count opacity -----------------------------------------------------------


def audit_count_opacity(
    p: int = 17,
    pairs: Sequence[tuple[tuple[int, int], tuple[int, int]]] = (((1, 1), (2, 2)), ((3, 1), (6, 2))),
    name: str = "count-opacity",
) -> AuditReport:
    """The blinded (sum, count) view hides the count exactly.

    For every nonzero scale factor r the querier recovers (r*S, r*C).  Two
    data points with equal averages S/C must induce identical view
    distributions over r — each of the p-1 line points exactly once — so no
    decoder can tell a 1-owner entity from a 2-owner entity with the same
    average, and any count guess is right with probability exactly 1/(p-1).
    """
    field = Field(p)
    draws = 0
    for (s1, c1), (s2, c2) in pairs:
        if (s1 * field.inv(c1) - s2 * field.inv(c2)) % p != 0:
            raise AuditError("count-opacity pairs must share the same average")
        dist1: dict[tuple[int, int], int] = {}
        dist2: dict[tuple[int, int], int] = {}
        for r in range(1, p):
            draws += 2
            k1 = (r * s1 % p, r * c1 % p)
            k2 = (r * s2 % p, r * c2 % p)
            dist1[k1] = dist1.get(k1, 0) + 1
            dist2[k2] = dist2.get(k2, 0) + 1
        if dist1 != dist2 or any(v != 1 for v in dist1.values()):
            return AuditReport(
                name=name, field_p=p, draws=draws, expect="same", same=False, ok=False,
                detail=f"pair {(s1, c1)} vs {(s2, c2)} distinguishable",
            )
    return AuditReport(
        name=name,
        field_p=p,
        draws=draws,
        expect="same",
        same=True,
        ok=True,
        detail=f"{len(pairs)} equal-average pairs, each view uniform over {p - 1} line points",
    )


def independence_test(
    pair: ScenarioPair,
    view: str = "full-round",
    budget: EnumerationBudget | None = None,
    expect: str = "same",
) -> AuditReport:
    """Dispatch one view audit: "shares", "queries", or "full-round".

    The verdict is an exact comparison of integer occurrence counts over
    the complete randomness space of the chosen view.
    """
    if view == "shares":
        return audit_share_privacy(pair, budget, expect=expect)
    if view == "queries":
        return audit_query_privacy(pair, budget, expect=expect)
    if view == "full-round":
        if expect != "same":
            raise AuditError(
                "the full-round audit is a positive certificate; run the "
                "share view for negative controls"
            )
        return audit_full_round(pair, budget)
    raise AuditError(f"unknown view {view!r}")


def audit_union_hiding(
    p: int = 17, budget: EnumerationBudget | None = None, name: str = "union-hiding"
) -> AuditReport:
    """Exhaustive single-bucket audit of the union phase's ownership hiding.

    One shared entity, three clients, client 1 watching: in one scenario
    honest client 2 owns the entity, in the other honest client 3 does
    (client 1 owns it in both, so the union and the aggregate-side
    conditioning are unchanged).  Client 1's whole union view is the two
    additive table shares it receives plus the final broadcast table; the
    enumeration ranges over the honest owner's annihilator and both
    received shares, and the two view distributions must match exactly.
    """
    budget = budget or EnumerationBudget()
    field = Field(p)
    image = entity_image("shared-entity", field)
    draws_per = (p - 1) * p**4
    budget.check(name, 2 * draws_per, "the field size")
    # Client 1's own contribution, annihilator fixed at 1 by conditioning
    # (with one bucket the salted bucket map is trivially constant, so a
    # contribution is just the running (coefficient, payload) cell pair).
    own = (1, image % p)
    zero = (0, 0)

    def distribution(owner: int) -> dict[tuple, int]:
        counts: dict[tuple, int] = {}
        for rho in range(1, p):
            owned = (rho, rho * image % p)
            from_2 = owned if owner == 2 else zero
            from_3 = owned if owner == 3 else zero
            table = combine_tables(field, [own, from_2, from_3])
            # The additive shares client 1 receives are the senders' fresh
            # uniform draws (each sender keeps the remainder), so they are
            # free cells; the unseen cells contribute an equal constant
            # multiplicity to every view and are marginalised out.
            for u0 in range(p):
                for u1 in range(p):
                    share2 = (u0, u1)
                    for v0 in range(p):
                        for v1 in range(p):
                            key = (share2, (v0, v1), table)
                            counts[key] = counts.get(key, 0) + 1
        return counts

    dist_a = distribution(2)
    dist_b = distribution(3)
    same = dist_a == dist_b
    return AuditReport(
        name=name,
        field_p=p,
        draws=2 * draws_per,
        expect="same",
        same=same,
        ok=same,
        detail=f"one bucket, {draws_per} draws per scenario",
    )


def run_privacy_audits(budget: EnumerationBudget | None = None) -> list[AuditReport]:
    """The canonical desk-scale audit suite, negative control included."""
    budget = budget or EnumerationBudget()
    reports = [
        audit_share_privacy(canonical_pair(17), budget),
        audit_query_privacy(canonical_pair(17), budget),
        audit_full_round(canonical_pair(7), budget),
        audit_share_privacy(
            overpowered_pair(17),
            budget,
            expect="different",
            name="share-view-with-T+1-colluders",
        ),
        audit_count_opacity(17),
    ]
    return reports


# -- runtime view capture and relay payload audit ----------------------------


@dataclass
class AdversaryView:
    """What one client actually held after a round (audit mode only)."""

    client_id: int
    round_idx: int
    shares: dict[int, tuple[int, ...]]  # sender -> unmasked share vector
    queries: list[tuple[int, int, tuple[int, ...]]]  # (sender, slot, vector)
    responses: dict[int, dict[int, tuple[int, ...]]]  # slot -> responder -> vector
    aggregate: list[tuple[int, ...]] | None


def capture_view(deployment, client_id: int, round_idx: int) -> AdversaryView:
    """Extract a client's recorded view from an audit-mode run."""
    node = deployment.clients[client_id]
    if not node.cfg.audit.audit_mode:
        raise AuditError("view capture requires audit_mode")
    hist = node.history.get(round_idx)
    if hist is None:
        raise AuditError(f"client {client_id} recorded no round {round_idx}")
    return AdversaryView(
        client_id=client_id,
        round_idx=round_idx,
        shares=hist["shares"],
        queries=list(hist["queries"]),
        responses={s: dict(d) for s, d in hist["responses"].items()},
        aggregate=hist.get("aggregate"),
    )


EXPECTED_KINDS = {
    MsgType.SETUP: KIND_PUBLIC,
    MsgType.UNION_SHARE: KIND_MASKED,
    MsgType.UNION_PARTIAL_SUM: KIND_PUBLIC,
    MsgType.UNION_BROADCAST: KIND_PUBLIC,
    MsgType.SHARE_UPLOAD: KIND_MASKED,
    MsgType.SHARE_FORWARD: KIND_MASKED,
    MsgType.QUERY_UPLOAD: KIND_MASKED,
    MsgType.QUERY_FORWARD: KIND_MASKED,
    MsgType.RESPONSE_UPLOAD: KIND_CIPHERTEXT,
    MsgType.MASKED_RESPONSE_DELIVER: KIND_CIPHERTEXT,
    MsgType.ABORT: KIND_PUBLIC,
}


def server_payload_audit(transcript: Iterable[TranscriptEntry]) -> list[str]:
    """Check that nothing en clair ever crossed the relay.

    Every frame's payload kind must match the structural expectation for its
    message type: round-phase traffic is one-time-pad masked or Paillier
    ciphertext; only setup, union bookkeeping, and aborts are protocol
    public.  Returns a list of violations (empty = clean).  A run with the
    leak-raw-shares sabotage hook enabled must fail this audit.
    """
    violations = []
    for i, entry in enumerate(transcript):
        want = EXPECTED_KINDS[entry.msg.msg_type]
        if entry.kind != want:
            violations.append(
                f"frame {i}: {entry.msg.msg_type.name} from party "
                f"{entry.link_sender} carries kind {entry.kind!r}, expected {want!r}"
            )
    return violations
