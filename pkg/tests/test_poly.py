"""Polynomial sharing, selector queries, blinding, and reconstruction."""

from __future__ import annotations

import random

import pytest

from embagg.field import Field, FieldError
from embagg.poly import (
    EvalPoints,
    InconsistentResponses,
    ProtocolParams,
    blind_poly_evals,
    lagrange_eval,
    lagrange_weights,
    partition_count,
    query_encode,
    reconstruct_recover,
    share_encode,
)


def toy_params(
    p: int, n_clients: int, threshold: int, n_entities: int = 1, dim: int = 0
) -> ProtocolParams:
    return ProtocolParams.build(Field(p), n_clients, threshold, n_entities, dim)


# -- block-count law --------------------------------------------------------


def test_block_count_exists_exactly_when_threshold_is_below_half():
    for n in range(3, 21):
        for t in range(1, n + 1):
            if 2 * t < n:
                k = partition_count(n, t)
                assert k == (n + 1) // 2 - t >= 1
            else:
                with pytest.raises(FieldError, match="T < N/2"):
                    partition_count(n, t)
    with pytest.raises(FieldError):
        partition_count(0, 1)
    with pytest.raises(FieldError):
        partition_count(3, 0)


def test_response_count_always_covers_the_product_degree():
    # N responses must determine a degree-2(K+T-1) curve; with the block
    # count law the margin is exact for odd N and one spare point for even.
    for n in range(3, 21):
        for t in range(1, (n - 1) // 2 + 1):
            params = toy_params(61, n, t)
            need = params.product_degree + 1
            assert need <= n
            assert (need == n) == (n % 2 == 1)


# -- parameter construction -------------------------------------------------


def test_default_point_layout_is_code_nodes_then_client_nodes():
    params = toy_params(17, 3, 1, n_entities=2)
    assert params.n_blocks == 1
    assert params.points.code_nodes == (1, 2)
    assert params.points.client_nodes == (3, 4, 5)
    assert params.padded_len == params.n_blocks * params.block_len


def test_block_length_is_the_ceiling_split_of_dim_plus_flag():
    # dim + 1 slots (values plus the ownership flag) split across K blocks
    for n, t, dim, want in [(3, 1, 0, 1), (3, 1, 4, 5), (7, 1, 4, 2), (7, 1, 5, 2)]:
        assert toy_params(101, n, t, dim=dim).block_len == want


def test_parameter_validation_rejects_bad_geometry():
    with pytest.raises(FieldError):
        toy_params(3, 3, 1)  # field too small for nodes 1..5
    with pytest.raises(FieldError):
        ProtocolParams.build(Field(17), 3, 1, 1, -1)
    with pytest.raises(FieldError, match="code nodes"):
        ProtocolParams.build(
            Field(17), 3, 1, 1, 0, EvalPoints(code_nodes=(1,), client_nodes=(3, 4, 5))
        )
    with pytest.raises(FieldError, match="repeats"):
        EvalPoints(code_nodes=(1, 2), client_nodes=(2, 4, 5))


# -- interpolation ----------------------------------------------------------


def test_interpolation_recovers_known_polynomials():
    f = Field(1009)
    rng = random.Random(0x90)
    for _ in range(50):
        coeffs = [rng.randrange(f.p) for _ in range(rng.randrange(1, 6))]
        xs = rng.sample(range(f.p), len(coeffs))

        def poly(x: int) -> int:
            return sum(c * pow(x, i, f.p) for i, c in enumerate(coeffs)) % f.p

        nodes = [(x, (poly(x),)) for x in xs]
        probe = rng.randrange(f.p)
        assert lagrange_eval(f, nodes, probe) == (poly(probe),)
        ws = lagrange_weights(f, xs, probe)
        assert sum(w * poly(x) for w, x in zip(ws, xs)) % f.p == poly(probe)


def test_interpolation_input_validation():
    f = Field(17)
    with pytest.raises(FieldError, match="distinct"):
        lagrange_weights(f, [1, 1, 2], 0)
    with pytest.raises(FieldError):
        lagrange_eval(f, [], 0)
    with pytest.raises(FieldError, match="equal length"):
        lagrange_eval(f, [(1, (1,)), (2, (1, 2))], 0)


# -- the three-client worked geometry ---------------------------------------
#
# With three clients and threshold 1 the default layout has data node 1,
# noise node 2, client nodes 3..5.  The share line through (1, w), (2, z) is
# w(2-x) + z(x-1), so the client shares are -w+2z, -2w+3z, -3w+4z; the
# weights pulling the data node back from the client nodes are (6, -8, 3);
# and the blinding parabola vanishing at node 1 with noises (3a, 3b) at
# nodes 3, 4 reaches -6a + 8b at node 5.  All checked by hand.


def test_share_coefficients_match_the_hand_worked_line():
    p = 1009
    params = toy_params(p, 3, 1)
    w_only = [share_encode(params, [(1,)], [(0,)], x)[0] for x in (3, 4, 5)]
    z_only = [share_encode(params, [(0,)], [(1,)], x)[0] for x in (3, 4, 5)]
    assert w_only == [(-1) % p, (-2) % p, (-3) % p]
    assert z_only == [2, 3, 4]
    # echoing a code node returns the stored block itself
    assert share_encode(params, [(7,)], [(9,)], 1) == (7,)
    assert share_encode(params, [(7,)], [(9,)], 2) == (9,)


def test_recovery_weights_match_the_hand_worked_values():
    p = 1009
    f = Field(p)
    assert lagrange_weights(f, [3, 4, 5], 1) == (6, (-8) % p, 3)


def test_query_shares_match_the_hand_worked_selector_lines():
    p = 1009
    params = toy_params(p, 3, 1, n_entities=2)
    for z1 in (0, 1, 5):
        for z2 in (0, 1, 7):
            got = query_encode(params, 0, [(z1,), (z2,)], 3)
            assert got == ((-1 + 2 * z1) % p, (2 * z2) % p)


def test_blinding_propagation_matches_the_hand_worked_weights():
    p = 1009
    params = toy_params(p, 3, 1)
    for a, b in [(1, 0), (0, 1), (1, 1), (2, 5)]:
        evals = blind_poly_evals(params, [(3 * a,), (3 * b,)])
        assert evals[0] == ((3 * a) % p,)
        assert evals[1] == ((3 * b) % p,)
        assert evals[2] == ((-6 * a + 8 * b) % p,)


# -- sharing threshold ------------------------------------------------------


def test_any_threshold_many_shares_are_exactly_uniform():
    # p=17, N=3, T=1: for each single client node, as the noise ranges over
    # the field every share value appears exactly once, for either secret.
    p = 17
    params = toy_params(p, 3, 1)
    for node in params.points.client_nodes:
        for w in (0, 5):
            seen = sorted(share_encode(params, [(w,)], [(z,)], node)[0] for z in range(p))
            assert seen == list(range(p))


def test_threshold_plus_data_count_shares_determine_the_secret():
    p = 17
    params = toy_params(p, 3, 1)
    f = params.field
    nodes = params.points.client_nodes
    for w in (0, 5, 11):
        for z in range(p):
            shares = {x: share_encode(params, [(w,)], [(z,)], x) for x in nodes}
            for i in range(3):
                for j in range(i + 1, 3):
                    pair = [(nodes[i], shares[nodes[i]]), (nodes[j], shares[nodes[j]])]
                    assert lagrange_eval(f, pair, 1) == (w,)


# -- response reconstruction ------------------------------------------------


def _simulate_responses(
    params: ProtocolParams, rng: random.Random, blind: tuple[int, list[tuple[int, ...]]] | None
) -> tuple[list[list[int]], list[tuple[int, ...]]]:
    """Single-entity round in pure polynomial terms.

    Returns (data blocks, per-client response vectors) where each response
    is query-share * data-share at that client's node, optionally blinded.
    """
    p = params.field.p
    data = [
        [rng.randrange(p) for _ in range(params.block_len)]
        for _ in range(params.n_blocks)
    ]
    noise = [
        [rng.randrange(p) for _ in range(params.block_len)]
        for _ in range(params.threshold)
    ]
    qnoise = [tuple(rng.randrange(p) for _ in range(params.threshold))]
    responses = []
    for v, x in enumerate(params.points.client_nodes):
        y = share_encode(params, data, noise, x)
        q = query_encode(params, 0, qnoise, x)[0]
        resp = [q * c % p for c in y]
        if blind is not None:
            r, psi = blind
            resp = [(r * c + e) % p for c, e in zip(resp, psi[v])]
        responses.append(tuple(resp))
    return data, responses


def test_reconstruction_reads_back_every_data_block():
    rng = random.Random(0xD4)
    for n, t, dim in [(3, 1, 0), (5, 1, 3), (5, 2, 2), (7, 2, 4), (9, 3, 5)]:
        params = toy_params(1009, n, t, dim=dim)
        data, responses = _simulate_responses(params, rng, blind=None)
        got = reconstruct_recover(params, responses)
        assert got == [tuple(b) for b in data]


def test_blinding_vanishes_at_the_data_nodes():
    # Recovering blinded responses must yield exactly r * data: the blinding
    # curve is zero wherever data lives, whatever its noise values are.
    rng = random.Random(0xD5)
    for n, t, dim in [(3, 1, 0), (5, 2, 3), (7, 3, 2)]:
        params = toy_params(1009, n, t, dim=dim)
        p = params.field.p
        r = rng.randrange(1, p)
        noises = [
            tuple(rng.randrange(p) for _ in range(params.block_len))
            for _ in range(params.n_blind_noises)
        ]
        psi = blind_poly_evals(params, noises)
        data, responses = _simulate_responses(params, rng, blind=(r, psi))
        got = reconstruct_recover(params, responses)
        assert got == [tuple(r * c % p for c in block) for block in data]


def test_surplus_responses_catch_tampering():
    # Even client counts leave a spare response beyond the product degree;
    # any tampering with it must be flagged, while honest runs pass.
    rng = random.Random(0xD6)
    params = toy_params(1009, 4, 1, dim=2)
    assert params.product_degree + 1 == 3  # one surplus response
    _, responses = _simulate_responses(params, rng, blind=None)
    reconstruct_recover(params, responses)  # honest: no complaint
    bad = [list(r) for r in responses]
    bad[3][0] = (bad[3][0] + 1) % params.field.p
    with pytest.raises(InconsistentResponses):
        reconstruct_recover(params, [tuple(r) for r in bad])


def test_reconstruction_input_validation():
    params = toy_params(17, 3, 1)
    with pytest.raises(FieldError, match="expected 3 responses"):
        reconstruct_recover(params, [(1,), (2,)])
    with pytest.raises(FieldError, match="block length"):
        reconstruct_recover(params, [(1, 2), (3, 4), (5, 6)])


def test_share_and_query_encoders_validate_shapes():
    params = toy_params(17, 3, 1, n_entities=2)
    with pytest.raises(FieldError, match="data blocks"):
        share_encode(params, [], [(0,)], 3)
    with pytest.raises(FieldError, match="noise blocks"):
        share_encode(params, [(1,)], [], 3)
    with pytest.raises(FieldError, match="out of range"):
        query_encode(params, 2, [(0,), (0,)], 3)
    with pytest.raises(FieldError, match="noise rows"):
        query_encode(params, 0, [(0,)], 3)
    with pytest.raises(FieldError, match="blinding noise"):
        blind_poly_evals(params, [(0,)])
