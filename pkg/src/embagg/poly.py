"""Polynomial share/query encoding for the aggregation protocol.

One retrieval round moves vectors around as evaluations of low-degree
polynomials over F_p.  The geometry is fixed by two disjoint sets of
evaluation points:

* ``code_nodes`` — K + T points.  The first K carry the data blocks of an
  expanded embedding (or the 0/1 selector bits of a query), the trailing T
  carry fresh blinding noise.  Any T share evaluations are therefore
  uniform, while any K + T determine the polynomial.
* ``client_nodes`` — one point per client; client v's share of anything is
  the polynomial evaluated at its node.

Products of a degree-(K+T-1) query polynomial with a degree-(K+T-1) share
polynomial have degree 2(K+T-1), which is why the client count must satisfy
``2(K+T-1) < N``: the N response evaluations then over-determine the product
polynomial, and the surplus points double as a consistency check.

The server hides per-entity owner counts behind a blinding polynomial of the
same product degree: zero at the first K code nodes, free noise at the first
K + 2T - 1 client nodes — exactly 2K + 2T - 1 constraints, pinning every
degree of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .field import Field, FieldError, vec_add, vec_scale

__all__ = [
    "EvalPoints",
    "ProtocolParams",
    "partition_count",
    "lagrange_weights",
    "lagrange_eval",
    "share_encode",
    "query_encode",
    "blind_poly_evals",
    "reconstruct_recover",
    "InconsistentResponses",
]


class InconsistentResponses(ValueError):
    """Raised when surplus response points fall off the interpolated curve."""


def partition_count(n_clients: int, threshold: int) -> int:
    """Number of data blocks K carved out of one expanded embedding.

    ``K = floor((N + 1) / 2) - T``; positive exactly when ``T < N / 2``, and
    then ``2 (K + T - 1) < N`` always holds, so N shares always suffice to
    rebuild the blinded products.
    """
    if n_clients < 1 or threshold < 1:
        raise FieldError("need at least one client and a threshold of at least 1")
    k = (n_clients + 1) // 2 - threshold
    if k < 1:
        raise FieldError(
            f"no valid block count for N={n_clients}, T={threshold}: "
            f"the collusion threshold must satisfy T < N/2"
        )
    return k


@dataclass(frozen=True)
class EvalPoints:
    """The two disjoint families of evaluation points."""

    code_nodes: tuple[int, ...]  # K + T points: data then noise positions
    client_nodes: tuple[int, ...]  # N points, one per client (1-indexed by client)

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for x in (*self.code_nodes, *self.client_nodes):
            if x in seen:
                raise FieldError(f"evaluation points must be distinct; {x} repeats")
            seen.add(x)

    @classmethod
    def default(cls, n_clients: int, n_code: int) -> "EvalPoints":
        """Canonical layout: code nodes 1..K+T, client nodes K+T+1..K+T+N."""
        return cls(
            code_nodes=tuple(range(1, n_code + 1)),
            client_nodes=tuple(range(n_code + 1, n_code + 1 + n_clients)),
        )


@dataclass(frozen=True)
class ProtocolParams:
    """Everything both sides must agree on to encode and decode one round."""

    field: Field
    n_clients: int
    threshold: int
    n_entities: int
    dim: int
    n_blocks: int
    block_len: int
    points: EvalPoints

    @classmethod
    def build(
        cls,
        field: Field,
        n_clients: int,
        threshold: int,
        n_entities: int,
        dim: int,
        points: EvalPoints | None = None,
    ) -> "ProtocolParams":
        k = partition_count(n_clients, threshold)
        if n_entities < 0 or dim < 0:
            raise FieldError("entity count and dimension must be non-negative")
        block_len = -(-(dim + 1) // k)  # ceil((d+1)/K)
        if points is None:
            points = EvalPoints.default(n_clients, k + threshold)
        if len(points.code_nodes) != k + threshold:
            raise FieldError(
                f"need {k + threshold} code nodes, got {len(points.code_nodes)}"
            )
        if len(points.client_nodes) != n_clients:
            raise FieldError(
                f"need {n_clients} client nodes, got {len(points.client_nodes)}"
            )
        if field.p <= max(*points.code_nodes, *points.client_nodes):
            raise FieldError("field too small for the evaluation point layout")
        return cls(
            field=field,
            n_clients=n_clients,
            threshold=threshold,
            n_entities=n_entities,
            dim=dim,
            n_blocks=k,
            block_len=block_len,
            points=points,
        )

    @property
    def padded_len(self) -> int:
        """Length of one expanded embedding after zero padding: K * block_len."""
        return self.n_blocks * self.block_len

    @property
    def share_degree(self) -> int:
        return self.n_blocks + self.threshold - 1

    @property
    def product_degree(self) -> int:
        return 2 * (self.n_blocks + self.threshold - 1)

    @property
    def n_blind_noises(self) -> int:
        """Free noise values in the server's blinding polynomial: K + 2T - 1."""
        return self.n_blocks + 2 * self.threshold - 1


# -- interpolation ---------------------------------------------------------


def lagrange_weights(field: Field, xs: Sequence[int], x: int) -> tuple[int, ...]:
    """Weights w_i with  poly(x) = sum_i w_i * poly(xs[i])  for deg < len(xs)."""
    if len(set(xs)) != len(xs):
        raise FieldError("interpolation nodes must be distinct")
    p = field.p
    weights = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if i == j:
                continue
            num = num * (x - xj) % p
            den = den * (xi - xj) % p
        weights.append(num * field.inv(den) % p)
    return tuple(weights)


def lagrange_eval(
    field: Field, nodes: Sequence[tuple[int, Sequence[int]]], x: int
) -> tuple[int, ...]:
    """Evaluate the unique interpolant through vector-valued nodes at ``x``.

    ``nodes`` is a list of ``(abscissa, vector)`` pairs; interpolation is
    coordinatewise, so all vectors must share one length.
    """
    if not nodes:
        raise FieldError("cannot interpolate through zero nodes")
    width = len(nodes[0][1])
    for _, vec in nodes:
        if len(vec) != width:
            raise FieldError("all node vectors must have equal length")
    ws = lagrange_weights(field, [xi for xi, _ in nodes], x)
    p = field.p
    out = [0] * width
    for w, (_, vec) in zip(ws, nodes):
        for c in range(width):
            out[c] = (out[c] + w * vec[c]) % p
    return tuple(out)


# -- share / query / blinding encoders -------------------------------------


def share_encode(
    params: ProtocolParams,
    data_blocks: Sequence[Sequence[int]],
    noise_blocks: Sequence[Sequence[int]],
    x: int,
) -> tuple[int, ...]:
    """One share of an expanded embedding: its polynomial evaluated at ``x``.

    The polynomial (degree <= K+T-1, one per coordinate of a block) runs
    through ``data_blocks`` at the K data nodes and ``noise_blocks`` at the
    T noise nodes.  Calling with a client node yields that client's share;
    calling with a data node just echoes the corresponding block.
    """
    k, t = params.n_blocks, params.threshold
    if len(data_blocks) != k:
        raise FieldError(f"expected {k} data blocks, got {len(data_blocks)}")
    if len(noise_blocks) != t:
        raise FieldError(f"expected {t} noise blocks, got {len(noise_blocks)}")
    nodes = [
        (params.points.code_nodes[i], data_blocks[i]) for i in range(k)
    ] + [
        (params.points.code_nodes[k + j], noise_blocks[j]) for j in range(t)
    ]
    return lagrange_eval(params.field, nodes, x)


def query_encode(
    params: ProtocolParams,
    target_entity: int,
    noises: Sequence[Sequence[int]],
    x: int,
) -> tuple[int, ...]:
    """One share of a retrieval query for ``target_entity``.

    Coordinate m of the result is the evaluation at ``x`` of a selector
    polynomial that is 1 at every data node iff ``m == target_entity`` (else
    0), with T fresh noise values at the noise nodes.  ``noises[m]`` supplies
    the T scalars for coordinate m.
    """
    m_total = params.n_entities
    if not 0 <= target_entity < m_total:
        raise FieldError(f"target entity {target_entity} out of range 0..{m_total - 1}")
    if len(noises) != m_total or any(len(z) != params.threshold for z in noises):
        raise FieldError(
            f"need {m_total} noise rows of {params.threshold} scalars each"
        )
    k, t = params.n_blocks, params.threshold
    out = []
    for m in range(m_total):
        bit = 1 if m == target_entity else 0
        nodes = [
            (params.points.code_nodes[i], (bit,)) for i in range(k)
        ] + [
            (params.points.code_nodes[k + j], (noises[m][j],)) for j in range(t)
        ]
        out.append(lagrange_eval(params.field, nodes, x)[0])
    return tuple(out)


def blind_poly_evals(
    params: ProtocolParams, noises: Sequence[Sequence[int]]
) -> list[tuple[int, ...]]:
    """Server blinding polynomial evaluated at every client node.

    The polynomial has the product degree 2(K+T-1); it vanishes at the K
    data nodes and takes the K + 2T - 1 given noise vectors at the first
    K + 2T - 1 client nodes.  Returns its value (one vector of block_len) at
    each of the N client nodes — the first K + 2T - 1 echo the noise inputs.
    """
    want = params.n_blind_noises
    if len(noises) != want:
        raise FieldError(f"expected {want} blinding noise vectors, got {len(noises)}")
    width = params.block_len
    for z in noises:
        if len(z) != width:
            raise FieldError("blinding noise vectors must have block length")
    zero = (0,) * width
    nodes = [(params.points.code_nodes[i], zero) for i in range(params.n_blocks)] + [
        (params.points.client_nodes[j], tuple(noises[j])) for j in range(want)
    ]
    out: list[tuple[int, ...]] = []
    for v in range(params.n_clients):
        if v < want:
            out.append(tuple(z % params.field.p for z in noises[v]))
        else:
            out.append(lagrange_eval(params.field, nodes, params.points.client_nodes[v]))
    return out


def reconstruct_recover(
    params: ProtocolParams, responses: Sequence[Sequence[int]]
) -> list[tuple[int, ...]]:
    """Interpolate the blinded product polynomial and read the data nodes.

    ``responses[v]`` is the (decrypted) response vector evaluated at client
    node v.  The product degree D = 2(K+T-1) needs D+1 points; the remaining
    N - D - 1 responses must land on the same curve or the round is declared
    inconsistent.  Returns the curve's value at each of the K data nodes.
    """
    n = params.n_clients
    if len(responses) != n:
        raise FieldError(f"expected {n} responses, got {len(responses)}")
    width = params.block_len
    for r in responses:
        if len(r) != width:
            raise FieldError("response vectors must have block length")
    need = params.product_degree + 1
    nodes = [
        (params.points.client_nodes[v], tuple(responses[v])) for v in range(need)
    ]
    for v in range(need, n):
        predicted = lagrange_eval(params.field, nodes, params.points.client_nodes[v])
        if predicted != tuple(x % params.field.p for x in responses[v]):
            raise InconsistentResponses(
                f"response from client node index {v} is off the degree-"
                f"{params.product_degree} curve fitted to the first {need}"
            )
    return [
        lagrange_eval(params.field, nodes, params.points.code_nodes[i])
        for i in range(params.n_blocks)
    ]
