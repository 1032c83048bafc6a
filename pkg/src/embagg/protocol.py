"""Client and relay state machines for exact private embedding aggregation.

One deployment is N clients plus one untrusted relay (party 0).  Each
client holds embeddings for a private subset of entities; every round the
clients jointly compute, for every entity, the exact average of its owners'
embeddings — revealing to nobody which client owns which entity, nor any
individual embedding, as long as at most T clients (T < N/2) collude and
the relay colludes with no one.

Phases of a deployment, all star-routed through the relay:

1.  **Setup.**  Clients exchange Diffie-Hellman values and Paillier public
    keys via a relay directory broadcast.
2.  **Union.**  The randomized hash-table union (see ``union.py``) runs
    under T-private additive sharing; the relay broadcasts the final table
    and everyone learns the entity-image union, nothing more.
3.  **Sharing.**  Each client expands, per union entity, its embedding to
    ``(values, padding, ownership indicator)`` (all zero when unowned),
    carves it into K blocks, and sends every other client one masked
    polynomial share covering all M entities.  Clients sum received shares
    coordinatewise.
4.  **Retrieval.**  For each owned entity a client sends every other client
    a masked share of a selector-polynomial query; responders reply with
    the inner product of query and aggregated share, encrypted under the
    querier's Paillier key.  The relay scales each response by a per-slot
    secret factor and adds an encrypted blinding polynomial evaluation, so
    decrypted responses interpolate to ``r * (sum, count)`` — the querier
    learns the exact average via a field ratio and bounded rational
    decoding, but not the owner count.

Self-shares and self-queries never touch the wire; self-responses do (the
relay must apply its blinding before the querier may see its own response).
All randomness is derived from the config master seed (see ``rng.py``), so
runs are reproducible and transport-independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from . import union as union_mod
from .config import DeploymentConfig, Derived
from .field import Field, FieldError, decode_blinded_ratio, vec_add
from .masking import (
    DhKeyPair,
    PadReuseGuard,
    PadStream,
    agree_master,
    otp_mask,
    otp_unmask,
    pad_seed,
)
from .paillier import (
    PaillierKeypair,
    PaillierPublicKey,
    c_add,
    c_scale,
    deserialize_ciphertext,
    generate_keypair,
    serialize_ciphertext,
)
from .poly import (
    InconsistentResponses,
    ProtocolParams,
    blind_poly_evals,
    query_encode,
    reconstruct_recover,
    share_encode,
)
from .rng import ByteSampler, derive_seed
from .transport import (
    KIND_CIPHERTEXT,
    KIND_MASKED,
    KIND_PLAIN,
    KIND_PUBLIC,
    MsgType,
    Outbound,
    WireMessage,
)

__all__ = [
    "ProtocolError",
    "GlobalEmbedding",
    "expand",
    "oracle_aggregate",
    "stub_identity",
    "build_stub",
    "ClientNode",
    "ServerNode",
    "SETUP_HELLO",
    "SETUP_DIRECTORY",
    "SETUP_SLOT_ANNOUNCE",
    "SETUP_ROUND_BEGIN",
    "SETUP_DONE",
]

SERVER_ID = 0

# setup-message payload tags
SETUP_HELLO = 1
SETUP_DIRECTORY = 2
SETUP_SLOT_ANNOUNCE = 3
SETUP_ROUND_BEGIN = 4
SETUP_DONE = 5

# union-broadcast payload tags
UNION_BEGIN = 1
UNION_FINAL = 2


class ProtocolError(RuntimeError):
    """A state-machine invariant failed (wrong phase, bad counts, bad data)."""


# -- plaintext reference path ----------------------------------------------


@dataclass(frozen=True)
class GlobalEmbedding:
    """Exact per-entity average recovered by one client for one round."""

    entity: str
    round: int
    values: tuple[Fraction, ...]

    @property
    def floats(self) -> list[float]:
        return [float(v) for v in self.values]


def expand(
    field: Field, quantized: Sequence[int], owned: bool, n_blocks: int, block_len: int
) -> list[tuple[int, ...]]:
    """Blocks of one expanded embedding.

    An owned embedding becomes ``(values..., 0-padding..., 1)`` — the
    ownership indicator is always the final coordinate of the final block —
    reduced into the field; an unowned entity expands to all-zero blocks.
    Summing expansions over clients therefore yields (sum, count) per
    entity.
    """
    total = n_blocks * block_len
    if len(quantized) + 1 > total:
        raise FieldError(
            f"{len(quantized)}+1 coordinates cannot fit {n_blocks} x {block_len} blocks"
        )
    if owned:
        flat = [q % field.p for q in quantized]
        flat += [0] * (total - len(quantized) - 1)
        flat.append(1)
    else:
        flat = [0] * total
    return [tuple(flat[i : i + block_len]) for i in range(0, total, block_len)]


def oracle_aggregate(
    assignment: dict[int, list[str]],
    embeddings: dict[int, dict[str, Sequence[float]]],
    scale: int,
) -> dict[str, tuple[Fraction, ...]]:
    """Reference answer: exact per-entity averages over the quantized grid.

    Entities owned by nobody simply do not appear.  Used to verify protocol
    output bit for bit (both paths quantize with the same grid, so their
    exact rationals must coincide).
    """
    owners: dict[str, list[int]] = {}
    for cid, names in assignment.items():
        for name in names:
            owners.setdefault(name, []).append(cid)
    out: dict[str, tuple[Fraction, ...]] = {}
    for name, cids in owners.items():
        vecs = [embeddings[cid][name] for cid in cids]
        dim = len(vecs[0])
        if any(len(v) != dim for v in vecs):
            raise ProtocolError(f"dimension mismatch for entity {name!r}")
        out[name] = tuple(
            Fraction(sum(round(scale * v[i]) for v in vecs), len(cids) * scale)
            for i in range(dim)
        )
    return out


# -- local update stubs ----------------------------------------------------

# (round_idx, client_id, entity, current_local, last_global | None) -> new local
Stub = Callable[[int, int, str, list[float], list[float] | None], list[float]]


def stub_identity(
    round_idx: int,
    client_id: int,
    entity: str,
    current: list[float],
    last_global: list[float] | None,
) -> list[float]:
    return list(current)


def build_stub(cfg: DeploymentConfig) -> Stub:
    """Stub chosen by the config: identity, or a seeded bounded random walk."""
    if cfg.update_rule == "identity":
        return stub_identity
    if cfg.update_rule != "random-walk":
        raise ProtocolError(f"unknown update rule {cfg.update_rule!r}")
    master = cfg.resolve_seed()
    scale = 1 << cfg.scale_bits
    bound = cfg.value_bound

    def walk(
        round_idx: int,
        client_id: int,
        entity: str,
        current: list[float],
        last_global: list[float] | None,
    ) -> list[float]:
        sampler = ByteSampler(
            derive_seed(master, "walk", round_idx, client_id, entity)
        )
        out = []
        for x in current:
            step = (sampler.int_below(2 * scale + 1) - scale) / (8 * scale)
            out.append(min(bound, max(-bound, x + step)))
        return out

    return walk


# -- shared node plumbing ---------------------------------------------------


class _NodeBase:
    party_id: int

    def __init__(self, cfg: DeploymentConfig, derived: Derived):
        self.cfg = cfg
        self.derived = derived
        self.field = derived.field
        self.finished = False
        self.aborted: str | None = None
        self.offline_seconds = 0.0
        self.offline_storage_bytes = 0
        # Public registry of registrable entity images; every party holds it
        # (who owns which entities is the secret, not which names exist).
        self.registry = frozenset(
            union_mod.entity_image(name, self.field)
            for name in cfg.universe_entities()
        )
        self._guard = PadReuseGuard() if cfg.audit.audit_mode else None

    def _pad(self, master: bytes, purpose: str, round_idx: int, sender: int, slot: int) -> PadStream:
        seed = pad_seed(master, purpose, round_idx, sender, slot)
        if self._guard is not None:
            self._guard.claim(seed)
        return PadStream(seed, self.field)

    def _abort(self, reason: str) -> list[Outbound]:
        self.aborted = reason
        self.finished = True
        return [
            Outbound(
                to=SERVER_ID if self.party_id != SERVER_ID else cid,
                msg=WireMessage(
                    msg_type=MsgType.ABORT,
                    round=getattr(self, "round_idx", 0),
                    sender=self.party_id,
                    receiver=0xFFFF,
                    slot=0,
                    payload=reason.encode("utf-8"),
                ),
                kind=KIND_PUBLIC,
            )
            for cid in (self._client_ids() if self.party_id == SERVER_ID else [0])
        ]

    def _client_ids(self) -> list[int]:
        return list(range(1, self.cfg.n_clients + 1))

    def state_summary(self) -> str:  # overridden with detail
        return f"party {self.party_id} phase=?"


def _setup_msg(sender: int, receiver: int, tag: int, payload: bytes, round_idx: int = 0) -> WireMessage:
    return WireMessage(
        msg_type=MsgType.SETUP,
        round=round_idx,
        sender=sender,
        receiver=receiver,
        slot=0,
        payload=bytes([tag]) + payload,
    )


def _encode_hello(cid: int, dh_pub: int, dh_bytes: int, pk: PaillierPublicKey) -> bytes:
    pk_bytes = pk.n.to_bytes((pk.n.bit_length() + 7) // 8, "big")
    dh = dh_pub.to_bytes(dh_bytes, "big")
    return (
        cid.to_bytes(2, "big")
        + len(dh).to_bytes(4, "big")
        + dh
        + len(pk_bytes).to_bytes(4, "big")
        + pk_bytes
    )


def _decode_hello(payload: bytes, offset: int = 0) -> tuple[int, int, int, int]:
    """Parse one hello entry; returns (cid, dh_pub, paillier_n, end_offset)."""
    cid = int.from_bytes(payload[offset : offset + 2], "big")
    off = offset + 2
    dh_len = int.from_bytes(payload[off : off + 4], "big")
    off += 4
    dh_pub = int.from_bytes(payload[off : off + dh_len], "big")
    off += dh_len
    pk_len = int.from_bytes(payload[off : off + 4], "big")
    off += 4
    n = int.from_bytes(payload[off : off + pk_len], "big")
    off += pk_len
    if off > len(payload):
        raise ProtocolError("truncated hello payload")
    return cid, dh_pub, n, off


# -- client -----------------------------------------------------------------


class ClientNode(_NodeBase):
    """Sequential state machine for one client."""

    def __init__(
        self,
        cid: int,
        cfg: DeploymentConfig,
        derived: Derived,
        entities: list[str],
        embeddings: dict[str, list[float]],
        stub: Stub | None = None,
    ):
        super().__init__(cfg, derived)
        if not 1 <= cid <= cfg.n_clients:
            raise ProtocolError(f"client id {cid} outside 1..{cfg.n_clients}")
        self.party_id = cid
        self.cid = cid
        self.entities = sorted(entities)
        if set(embeddings) != set(self.entities):
            raise ProtocolError("embeddings must cover exactly the owned entities")
        self.local: dict[str, list[float]] = {
            e: list(embeddings[e]) for e in self.entities
        }
        self.stub: Stub = stub or stub_identity
        self.phase = "hello"
        self.round_idx = 0

        root = derive_seed(derived.master_seed, "client", cid)
        self._root = root
        self.dh = DhKeyPair.generate(
            derived.dh_group, ByteSampler(derive_seed(root, "dh"))
        )
        self.paillier: PaillierKeypair = generate_keypair(
            cfg.paillier_bits,
            key_id=cid,
            sampler=ByteSampler(derive_seed(root, "paillier")),
            insecure=cfg.insecure_crypto,
        )
        self.peer_pks: dict[int, PaillierPublicKey] = {}
        self.masters: dict[int, bytes] = {}

        self.images = {e: union_mod.entity_image(e, self.field) for e in self.entities}
        if len(set(self.images.values())) != len(self.entities):
            raise ProtocolError("entity image collision within one client")
        self._attempt: union_mod.UnionAttempt | None = None
        self._union_recv: dict[int, tuple[int, ...]] = {}
        self._own_union_share: tuple[int, ...] | None = None

        self.union_images: tuple[int, ...] = ()
        self.params: ProtocolParams | None = None
        self.slots: list[str] = []  # own entities in union-index order
        self.results: dict[int, dict[str, GlobalEmbedding]] = {}
        self.history: dict[int, dict] = {}  # audit mode only

        self._recv_shares: dict[int, tuple[int, ...]] = {}
        self._agg: list[tuple[int, ...]] | None = None
        self._pending_queries: list[tuple[int, int, tuple[int, ...]]] = []
        self._self_queries: dict[int, tuple[int, ...]] = {}
        self._resp_buf: dict[int, dict[int, tuple[int, ...]]] = {}
        self._awaiting: set[int] = set()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> list[Outbound]:
        hello = _encode_hello(
            self.cid, self.dh.public, self.derived.dh_group.elem_bytes, self.paillier.public
        )
        return [
            Outbound(
                to=SERVER_ID,
                msg=_setup_msg(self.cid, SERVER_ID, SETUP_HELLO, hello),
                kind=KIND_PUBLIC,
            )
        ]

    def on_message(self, msg: WireMessage) -> list[Outbound]:
        if self.finished:
            return []
        mt = msg.msg_type
        if mt == MsgType.SETUP:
            tag = msg.payload[0]
            if tag == SETUP_DIRECTORY:
                return self._on_directory(msg.payload[1:])
            if tag == SETUP_ROUND_BEGIN:
                return self._begin_round(
                    int.from_bytes(msg.payload[1:5], "big")
                )
            if tag == SETUP_DONE:
                self.finished = True
                return []
            raise ProtocolError(f"client got setup tag {tag}")
        if mt == MsgType.UNION_BROADCAST:
            return self._on_union_broadcast(msg)
        if mt == MsgType.UNION_SHARE:
            return self._on_union_share(msg)
        if mt == MsgType.SHARE_FORWARD:
            return self._on_share(msg)
        if mt == MsgType.QUERY_FORWARD:
            return self._on_query(msg)
        if mt == MsgType.MASKED_RESPONSE_DELIVER:
            return self._on_response(msg)
        if mt == MsgType.ABORT:
            self.aborted = msg.payload.decode("utf-8", "replace")
            self.finished = True
            return []
        raise ProtocolError(f"client {self.cid} cannot handle {mt.name}")

    def state_summary(self) -> str:
        return (
            f"client{self.cid} phase={self.phase} round={self.round_idx} "
            f"shares={len(self._recv_shares)} awaiting={sorted(self._awaiting)}"
        )

    # -- setup -------------------------------------------------------------

    def _on_directory(self, payload: bytes) -> list[Outbound]:
        if self.phase != "hello":
            raise ProtocolError("directory received twice")
        count = int.from_bytes(payload[0:2], "big")
        off = 2
        for _ in range(count):
            cid, dh_pub, n, off = _decode_hello(payload, off)
            self.peer_pks[cid] = PaillierPublicKey(n=n, key_id=cid)
            if cid != self.cid:
                self.masters[cid] = agree_master(self.dh, dh_pub)
        if off != len(payload):
            raise ProtocolError("trailing bytes in directory payload")
        if set(self.peer_pks) != set(self._client_ids()):
            raise ProtocolError("directory did not cover every client")
        if self.peer_pks[self.cid].n != self.paillier.public.n:
            raise ProtocolError("directory carries a wrong key for this client")
        self.phase = "union"
        return []

    # -- union -------------------------------------------------------------

    def _on_union_broadcast(self, msg: WireMessage) -> list[Outbound]:
        tag = msg.payload[0]
        if tag == UNION_BEGIN:
            return self._on_union_begin(msg.payload[1:])
        if tag == UNION_FINAL:
            return self._on_union_final(msg.payload[1:])
        raise ProtocolError(f"unknown union broadcast tag {tag}")

    def _on_union_begin(self, payload: bytes) -> list[Outbound]:
        attempt = int.from_bytes(payload[0:4], "big")
        n_buckets = int.from_bytes(payload[4:8], "big")
        salt = payload[8:16]
        self._attempt = union_mod.UnionAttempt(attempt, n_buckets, salt)
        self._union_recv = {}
        contribution = union_mod.build_contribution(
            sorted(self.images.values()),
            self.field,
            n_buckets,
            salt,
            ByteSampler(derive_seed(self._root, "union-rho", attempt)),
        )
        split_sampler = ByteSampler(derive_seed(self._root, "union-split", attempt))
        peers = [v for v in self._client_ids() if v != self.cid]
        shares = union_mod.additive_split(
            self.field, contribution, len(peers) + 1, split_sampler
        )
        outs = []
        for peer, share in zip(peers, shares):
            stream = self._pad(self.masters[peer], "union-share", 0, self.cid, attempt)
            outs.append(
                Outbound(
                    to=SERVER_ID,
                    msg=WireMessage(
                        msg_type=MsgType.UNION_SHARE,
                        round=0,
                        sender=self.cid,
                        receiver=peer,
                        slot=attempt,
                        payload=self.field.encode_vec(
                            otp_mask(self.field, share, stream)
                        ),
                    ),
                    kind=KIND_MASKED,
                )
            )
        self._own_union_share = shares[-1]
        return outs + self._maybe_publish_partial()

    def _on_union_share(self, msg: WireMessage) -> list[Outbound]:
        if self._attempt is None or msg.slot != self._attempt.attempt:
            raise ProtocolError("union share for a stale attempt")
        sender = msg.sender
        stream = self._pad(
            self.masters[sender], "union-share", 0, sender, msg.slot
        )
        self._union_recv[sender] = otp_unmask(
            self.field, self.field.decode_vec(msg.payload), stream
        )
        return self._maybe_publish_partial()

    def _maybe_publish_partial(self) -> list[Outbound]:
        if (
            self._own_union_share is None
            or len(self._union_recv) != self.cfg.n_clients - 1
        ):
            return []
        partial = union_mod.combine_tables(
            self.field, [self._own_union_share, *self._union_recv.values()]
        )
        self._own_union_share = None
        assert self._attempt is not None
        return [
            Outbound(
                to=SERVER_ID,
                msg=WireMessage(
                    msg_type=MsgType.UNION_PARTIAL_SUM,
                    round=0,
                    sender=self.cid,
                    receiver=SERVER_ID,
                    slot=self._attempt.attempt,
                    payload=self.field.encode_vec(partial),
                ),
                kind=KIND_PUBLIC,
            )
        ]

    def _on_union_final(self, payload: bytes) -> list[Outbound]:
        assert self._attempt is not None
        if int.from_bytes(payload[0:4], "big") != self._attempt.attempt:
            raise ProtocolError("final union table for a stale attempt")
        n_buckets = int.from_bytes(payload[4:8], "big")
        salt = payload[8:16]
        cells = self.field.decode_vec(payload[16:])
        self.union_images = union_mod.extract_union(
            cells, self.field, salt, n_buckets, registry=self.registry
        )
        missing = [e for e in self.entities if self.images[e] not in self.union_images]
        if missing:
            return self._abort(f"own entities missing from union: {missing}")
        index_of = {img: m for m, img in enumerate(self.union_images)}
        self.slots = sorted(self.entities, key=lambda e: index_of[self.images[e]])
        self.params = ProtocolParams.build(
            self.field,
            self.cfg.n_clients,
            self.cfg.threshold,
            n_entities=len(self.union_images),
            dim=self.cfg.dim,
        )
        self.phase = "announced"
        return [
            Outbound(
                to=SERVER_ID,
                msg=_setup_msg(
                    self.cid,
                    SERVER_ID,
                    SETUP_SLOT_ANNOUNCE,
                    len(self.slots).to_bytes(4, "big"),
                ),
                kind=KIND_PUBLIC,
            )
        ]

    # -- rounds ------------------------------------------------------------

    def _begin_round(self, round_idx: int) -> list[Outbound]:
        if self.params is None:
            raise ProtocolError("round begun before the union completed")
        if self._awaiting:
            return self._abort(
                f"round {self.round_idx} still awaiting slots {sorted(self._awaiting)}"
            )
        params = self.params
        self.round_idx = round_idx
        self.phase = f"round{round_idx}"

        prev = self.results.get(round_idx - 1, {})
        for e in self.slots:
            last = prev.get(e)
            self.local[e] = self.stub(
                round_idx, self.cid, e, self.local[e], last.floats if last else None
            )
        quantized = {
            e: [self.derived.codec.quantize(x) for x in self.local[e]]
            for e in self.slots
        }

        index_of = {img: m for m, img in enumerate(self.union_images)}
        blocks_by_m: list[list[tuple[int, ...]]] = []
        own_by_m = {index_of[self.images[e]]: e for e in self.slots}
        for m in range(params.n_entities):
            if m in own_by_m:
                blocks_by_m.append(
                    expand(
                        self.field,
                        quantized[own_by_m[m]],
                        True,
                        params.n_blocks,
                        params.block_len,
                    )
                )
            else:
                blocks_by_m.append(
                    expand(self.field, [], False, params.n_blocks, params.block_len)
                )

        noise_by_m = []
        for m in range(params.n_entities):
            s = ByteSampler(derive_seed(self._root, "share-noise", round_idx, m))
            noise_by_m.append(
                [
                    tuple(s.int_below(self.field.p) for _ in range(params.block_len))
                    for _ in range(params.threshold)
                ]
            )

        outs: list[Outbound] = []
        sabotage = self.cfg.audit.leak_raw_shares
        for v in self._client_ids():
            node_x = params.points.client_nodes[v - 1]
            share_vec: list[int] = []
            for m in range(params.n_entities):
                share_vec.extend(
                    share_encode(params, blocks_by_m[m], noise_by_m[m], node_x)
                )
            if v == self.cid:
                self._recv_shares = {self.cid: tuple(share_vec)}
                continue
            if sabotage:
                payload, kind = tuple(share_vec), KIND_PLAIN
            else:
                stream = self._pad(self.masters[v], "share", round_idx, self.cid, 0)
                payload, kind = otp_mask(self.field, share_vec, stream), KIND_MASKED
            outs.append(
                Outbound(
                    to=SERVER_ID,
                    msg=WireMessage(
                        msg_type=MsgType.SHARE_UPLOAD,
                        round=round_idx,
                        sender=self.cid,
                        receiver=v,
                        slot=0,
                        payload=self.field.encode_vec(payload),
                    ),
                    kind=kind,
                )
            )

        self._agg = None
        self._pending_queries = []
        self._self_queries = {}
        self._resp_buf = {s: {} for s in range(len(self.slots))}
        self._awaiting = set(range(len(self.slots)))
        if self.cfg.audit.audit_mode:
            self.history[round_idx] = {"shares": {}, "queries": [], "responses": {}}

        # Query vectors depend only on slot layout, never on embedding values,
        # so with precompute enabled their construction counts as offline work.
        t_query = time.perf_counter()
        for s, e in enumerate(self.slots):
            target_m = index_of[self.images[e]]
            qs = ByteSampler(derive_seed(self._root, "query-noise", round_idx, s))
            noises = [
                tuple(qs.int_below(self.field.p) for _ in range(params.threshold))
                for _ in range(params.n_entities)
            ]
            for v in self._client_ids():
                node_x = params.points.client_nodes[v - 1]
                qvec = query_encode(params, target_m, noises, node_x)
                if v == self.cid:
                    self._self_queries[s] = qvec
                    continue
                stream = self._pad(self.masters[v], "query", round_idx, self.cid, s)
                outs.append(
                    Outbound(
                        to=SERVER_ID,
                        msg=WireMessage(
                            msg_type=MsgType.QUERY_UPLOAD,
                            round=round_idx,
                            sender=self.cid,
                            receiver=v,
                            slot=s,
                            payload=self.field.encode_vec(
                                otp_mask(self.field, qvec, stream)
                            ),
                        ),
                        kind=KIND_MASKED,
                    )
                )
        if self.cfg.precompute_offline:
            self.offline_seconds += time.perf_counter() - t_query
        outs.extend(self._maybe_aggregate())
        return outs

    def _on_share(self, msg: WireMessage) -> list[Outbound]:
        if msg.round != self.round_idx:
            raise ProtocolError(
                f"share for round {msg.round} while in round {self.round_idx}"
            )
        sender = msg.sender
        if sender in self._recv_shares:
            raise ProtocolError(f"duplicate share from client {sender}")
        vec = self.field.decode_vec(msg.payload)
        if self.cfg.audit.leak_raw_shares:
            share = vec
        else:
            stream = self._pad(self.masters[sender], "share", msg.round, sender, 0)
            share = otp_unmask(self.field, vec, stream)
        self._recv_shares[sender] = share
        if self.cfg.audit.audit_mode:
            self.history[self.round_idx]["shares"][sender] = share
        return self._maybe_aggregate()

    def _maybe_aggregate(self) -> list[Outbound]:
        if self._agg is not None or len(self._recv_shares) != self.cfg.n_clients:
            return []
        assert self.params is not None
        params = self.params
        width = params.n_entities * params.block_len
        total = [0] * width
        for vec in self._recv_shares.values():
            if len(vec) != width:
                raise ProtocolError("share vector has wrong length")
            total = list(vec_add(self.field, total, vec))
        self._agg = [
            tuple(total[m * params.block_len : (m + 1) * params.block_len])
            for m in range(params.n_entities)
        ]
        if self.cfg.audit.audit_mode:
            self.history[self.round_idx]["aggregate"] = list(self._agg)
        outs = []
        for s in sorted(self._self_queries):
            outs.extend(self._respond(self.cid, s, self._self_queries[s]))
        for sender, slot, qvec in self._pending_queries:
            outs.extend(self._respond(sender, slot, qvec))
        self._pending_queries = []
        return outs

    def _on_query(self, msg: WireMessage) -> list[Outbound]:
        if msg.round != self.round_idx:
            raise ProtocolError(
                f"query for round {msg.round} while in round {self.round_idx}"
            )
        sender, slot = msg.sender, msg.slot
        stream = self._pad(self.masters[sender], "query", msg.round, sender, slot)
        qvec = otp_unmask(self.field, self.field.decode_vec(msg.payload), stream)
        if self.cfg.audit.audit_mode:
            self.history[self.round_idx]["queries"].append((sender, slot, qvec))
        if self._agg is None:
            self._pending_queries.append((sender, slot, qvec))
            return []
        return self._respond(sender, slot, qvec)

    def _respond(self, querier: int, slot: int, qvec: Sequence[int]) -> list[Outbound]:
        assert self.params is not None and self._agg is not None
        params = self.params
        if len(qvec) != params.n_entities:
            raise ProtocolError("query vector has wrong length")
        p = self.field.p
        acc = [0] * params.block_len
        for m, q in enumerate(qvec):
            block = self._agg[m]
            for c in range(params.block_len):
                acc[c] = (acc[c] + q * block[c]) % p
        pk = self.peer_pks[querier]
        obf = ByteSampler(
            derive_seed(self._root, "resp-obf", self.round_idx, querier, slot)
        )
        if self.cfg.audit.audit_mode and querier == self.cid:
            self.history[self.round_idx].setdefault("self_inner", {})[slot] = tuple(acc)
        payload = b"".join(
            serialize_ciphertext(pk, pk.encrypt_sampled(a, obf)) for a in acc
        )
        return [
            Outbound(
                to=SERVER_ID,
                msg=WireMessage(
                    msg_type=MsgType.RESPONSE_UPLOAD,
                    round=self.round_idx,
                    sender=self.cid,
                    receiver=querier,
                    slot=slot,
                    payload=payload,
                ),
                kind=KIND_CIPHERTEXT,
            )
        ]

    def _on_response(self, msg: WireMessage) -> list[Outbound]:
        assert self.params is not None
        params = self.params
        if msg.round != self.round_idx:
            raise ProtocolError("response for a stale round")
        responder, slot = msg.sender, msg.slot
        if slot not in self._resp_buf:
            raise ProtocolError(f"response for unknown slot {slot}")
        if responder in self._resp_buf[slot]:
            raise ProtocolError(f"duplicate response from {responder} for slot {slot}")
        vec = []
        off = 0
        for _ in range(params.block_len):
            ct, off = deserialize_ciphertext(msg.payload, off)
            vec.append(self.paillier.decrypt(ct) % self.field.p)
        if off != len(msg.payload):
            raise ProtocolError("trailing bytes in response payload")
        self._resp_buf[slot][responder] = tuple(vec)
        if self.cfg.audit.audit_mode:
            self.history[self.round_idx]["responses"].setdefault(slot, {})[
                responder
            ] = tuple(vec)
        if len(self._resp_buf[slot]) < self.cfg.n_clients:
            return []
        return self._decode_slot(slot)

    def _decode_slot(self, slot: int) -> list[Outbound]:
        assert self.params is not None
        params = self.params
        responses = [self._resp_buf[slot][v] for v in self._client_ids()]
        try:
            data_vals = reconstruct_recover(params, responses)
        except InconsistentResponses as exc:
            return self._abort(str(exc))
        flat: list[int] = []
        for block in data_vals:
            flat.extend(block)
        blinded_count = flat[-1]
        if blinded_count == 0:
            return self._abort(f"slot {slot}: blinded count is zero")
        inv_count = self.field.inv(blinded_count)
        dim = params.dim
        values = []
        for i in range(params.padded_len - 1):
            ratio = flat[i] * inv_count % self.field.p
            if i >= dim:
                if ratio != 0:
                    return self._abort(f"slot {slot}: padding decoded nonzero")
                continue
            values.append(
                decode_blinded_ratio(
                    ratio, self.field, self.derived.codec, self.cfg.n_clients
                )
            )
        entity = self.slots[slot]
        self.results.setdefault(self.round_idx, {})[entity] = GlobalEmbedding(
            entity=entity, round=self.round_idx, values=tuple(values)
        )
        self._awaiting.discard(slot)
        return []


# -- server -----------------------------------------------------------------


class ServerNode(_NodeBase):
    """The relay: directory, union driver, forwarder, response blinder.

    Sees only masked payloads, ciphertexts, and protocol-public setup data;
    learns per-client retrieval slot *counts* (announced) but never slot
    identities, ownership, or embeddings.
    """

    def __init__(self, cfg: DeploymentConfig, derived: Derived):
        super().__init__(cfg, derived)
        self.party_id = SERVER_ID
        self.phase = "hello"
        self.round_idx = 0
        self._root = derive_seed(derived.master_seed, "server")
        self._hellos: dict[int, bytes] = {}
        self.peer_pks: dict[int, PaillierPublicKey] = {}
        self._attempt = union_mod.UnionAttempt(
            attempt=0, n_buckets=derived.union_buckets, salt=b""
        )
        self._partials: dict[int, tuple[int, ...]] = {}
        self.union_images: tuple[int, ...] = ()
        self.params: ProtocolParams | None = None
        self._slot_counts: dict[int, int] = {}
        self._shares_fwd = 0
        self._queries_fwd = 0
        self._delivered = 0
        self._material: dict[tuple[int, int, int], tuple[int, list, list]] = {}

    def start(self) -> list[Outbound]:
        return []

    def state_summary(self) -> str:
        return (
            f"server phase={self.phase} round={self.round_idx} "
            f"shares_fwd={self._shares_fwd} queries_fwd={self._queries_fwd} "
            f"delivered={self._delivered}"
        )

    def on_message(self, msg: WireMessage) -> list[Outbound]:
        if self.finished:
            return []
        mt = msg.msg_type
        if mt == MsgType.SETUP:
            tag = msg.payload[0]
            if tag == SETUP_HELLO:
                return self._on_hello(msg)
            if tag == SETUP_SLOT_ANNOUNCE:
                return self._on_announce(msg)
            raise ProtocolError(f"server got setup tag {tag}")
        if mt == MsgType.UNION_SHARE:
            return [Outbound(to=msg.receiver, msg=msg, kind=KIND_MASKED)]
        if mt == MsgType.UNION_PARTIAL_SUM:
            return self._on_partial(msg)
        if mt == MsgType.SHARE_UPLOAD:
            self._shares_fwd += 1
            fwd = WireMessage(
                msg_type=MsgType.SHARE_FORWARD,
                round=msg.round,
                sender=msg.sender,
                receiver=msg.receiver,
                slot=msg.slot,
                payload=msg.payload,
            )
            kind = KIND_PLAIN if self.cfg.audit.leak_raw_shares else KIND_MASKED
            return [Outbound(to=msg.receiver, msg=fwd, kind=kind)] + self._maybe_advance()
        if mt == MsgType.QUERY_UPLOAD:
            self._queries_fwd += 1
            fwd = WireMessage(
                msg_type=MsgType.QUERY_FORWARD,
                round=msg.round,
                sender=msg.sender,
                receiver=msg.receiver,
                slot=msg.slot,
                payload=msg.payload,
            )
            return [Outbound(to=msg.receiver, msg=fwd, kind=KIND_MASKED)] + self._maybe_advance()
        if mt == MsgType.RESPONSE_UPLOAD:
            return self._on_response_upload(msg)
        if mt == MsgType.ABORT:
            reason = msg.payload.decode("utf-8", "replace")
            self.aborted = reason
            self.finished = True
            return [
                Outbound(
                    to=cid,
                    msg=WireMessage(
                        msg_type=MsgType.ABORT,
                        round=self.round_idx,
                        sender=SERVER_ID,
                        receiver=cid,
                        slot=0,
                        payload=msg.payload,
                    ),
                    kind=KIND_PUBLIC,
                )
                for cid in self._client_ids()
                if cid != msg.sender
            ]
        raise ProtocolError(f"server cannot handle {mt.name}")

    # -- setup / union -----------------------------------------------------

    def _on_hello(self, msg: WireMessage) -> list[Outbound]:
        cid, _dh, n, end = _decode_hello(msg.payload[1:])
        if end != len(msg.payload) - 1:
            raise ProtocolError("trailing bytes in hello payload")
        if cid != msg.sender:
            raise ProtocolError("hello sender mismatch")
        self._hellos[cid] = msg.payload[1:]
        self.peer_pks[cid] = PaillierPublicKey(n=n, key_id=cid)
        if len(self._hellos) != self.cfg.n_clients:
            return []
        directory = len(self._hellos).to_bytes(2, "big") + b"".join(
            self._hellos[cid] for cid in self._client_ids()
        )
        self.phase = "union"
        outs = [
            Outbound(
                to=cid,
                msg=_setup_msg(SERVER_ID, cid, SETUP_DIRECTORY, directory),
                kind=KIND_PUBLIC,
            )
            for cid in self._client_ids()
        ]
        return outs + self._broadcast_union_begin()

    def _broadcast_union_begin(self) -> list[Outbound]:
        att = self._attempt
        salt = derive_seed(self._root, "union-salt", att.attempt)[:8]
        self._attempt = union_mod.UnionAttempt(att.attempt, att.n_buckets, salt)
        self._partials = {}
        payload = (
            bytes([UNION_BEGIN])
            + att.attempt.to_bytes(4, "big")
            + att.n_buckets.to_bytes(4, "big")
            + salt
        )
        return [
            Outbound(
                to=cid,
                msg=WireMessage(
                    msg_type=MsgType.UNION_BROADCAST,
                    round=0,
                    sender=SERVER_ID,
                    receiver=cid,
                    slot=att.attempt,
                    payload=payload,
                ),
                kind=KIND_PUBLIC,
            )
            for cid in self._client_ids()
        ]

    def _on_partial(self, msg: WireMessage) -> list[Outbound]:
        att = self._attempt
        if msg.slot != att.attempt:
            raise ProtocolError("partial sum for a stale union attempt")
        if msg.sender in self._partials:
            raise ProtocolError(f"duplicate partial sum from {msg.sender}")
        self._partials[msg.sender] = self.field.decode_vec(msg.payload)
        if len(self._partials) != self.cfg.n_clients:
            return []
        cells = union_mod.combine_tables(self.field, self._partials.values())
        try:
            self.union_images = union_mod.extract_union(
                cells, self.field, att.salt, att.n_buckets, registry=self.registry
            )
        except union_mod.CollisionDetected:
            if att.attempt + 1 >= self.cfg.union_retry_limit:
                return self._abort("union retries exhausted")
            self._attempt = union_mod.UnionAttempt(
                att.attempt + 1, att.n_buckets * 2, b""
            )
            return self._broadcast_union_begin()
        self.params = ProtocolParams.build(
            self.field,
            self.cfg.n_clients,
            self.cfg.threshold,
            n_entities=len(self.union_images),
            dim=self.cfg.dim,
        )
        self.phase = "announce"
        payload = (
            bytes([UNION_FINAL])
            + att.attempt.to_bytes(4, "big")
            + att.n_buckets.to_bytes(4, "big")
            + att.salt
            + self.field.encode_vec(cells)
        )
        return [
            Outbound(
                to=cid,
                msg=WireMessage(
                    msg_type=MsgType.UNION_BROADCAST,
                    round=0,
                    sender=SERVER_ID,
                    receiver=cid,
                    slot=att.attempt,
                    payload=payload,
                ),
                kind=KIND_PUBLIC,
            )
            for cid in self._client_ids()
        ]

    def _on_announce(self, msg: WireMessage) -> list[Outbound]:
        cid = msg.sender
        if cid in self._slot_counts:
            raise ProtocolError(f"duplicate slot announce from {cid}")
        self._slot_counts[cid] = int.from_bytes(msg.payload[1:5], "big")
        if len(self._slot_counts) != self.cfg.n_clients:
            return []
        if self.cfg.rounds == 0:
            return self._finish()
        return self._begin_round(1)

    # -- rounds ------------------------------------------------------------

    def _begin_round(self, round_idx: int) -> list[Outbound]:
        self.round_idx = round_idx
        self.phase = f"round{round_idx}"
        self._shares_fwd = 0
        self._queries_fwd = 0
        self._delivered = 0
        if self.cfg.precompute_offline:
            t0 = time.perf_counter()
            for querier in self._client_ids():
                for slot in range(self._slot_counts[querier]):
                    self._ensure_material(round_idx, querier, slot)
            self.offline_seconds += time.perf_counter() - t0
        return [
            Outbound(
                to=cid,
                msg=_setup_msg(
                    SERVER_ID,
                    cid,
                    SETUP_ROUND_BEGIN,
                    round_idx.to_bytes(4, "big"),
                    round_idx=round_idx,
                ),
                kind=KIND_PUBLIC,
            )
            for cid in self._client_ids()
        ]

    def _ensure_material(
        self, round_idx: int, querier: int, slot: int
    ) -> tuple[int, list, list]:
        key = (round_idx, querier, slot)
        if key in self._material:
            return self._material[key]
        assert self.params is not None
        params = self.params
        p = self.field.p
        r_scalar = ByteSampler(
            derive_seed(self._root, "blind-scalar", round_idx, querier, slot)
        ).nonzero_below(p)
        noise_sampler = ByteSampler(
            derive_seed(self._root, "blind-noise", round_idx, querier, slot)
        )
        noises = [
            tuple(noise_sampler.int_below(p) for _ in range(params.block_len))
            for _ in range(params.n_blind_noises)
        ]
        evals = blind_poly_evals(params, noises)
        pk = self.peer_pks[querier]
        enc_rows = []
        for v in self._client_ids():
            obf = ByteSampler(
                derive_seed(self._root, "psi-obf", round_idx, querier, slot, v)
            )
            enc_rows.append(
                [pk.encrypt_sampled(x, obf) for x in evals[v - 1]]
            )
        material = (r_scalar, evals, enc_rows)
        self._material[key] = material
        elem = self.field.elem_bytes
        self.offline_storage_bytes += (
            elem
            + len(evals) * params.block_len * elem
            + sum(len(serialize_ciphertext(pk, ct)) for row in enc_rows for ct in row)
        )
        return material

    def _on_response_upload(self, msg: WireMessage) -> list[Outbound]:
        assert self.params is not None
        params = self.params
        if msg.round != self.round_idx:
            raise ProtocolError("response upload for a stale round")
        querier, slot, responder = msg.receiver, msg.slot, msg.sender
        if not 0 <= slot < self._slot_counts.get(querier, 0):
            raise ProtocolError(
                f"response for unannounced slot {slot} of client {querier}"
            )
        r_scalar, _evals, enc_rows = self._ensure_material(msg.round, querier, slot)
        pk = self.peer_pks[querier]
        out_payload = b""
        off = 0
        for c in range(params.block_len):
            ct, off = deserialize_ciphertext(msg.payload, off)
            if ct.key_id != querier:
                raise ProtocolError("response encrypted under the wrong key")
            blinded = c_add(
                pk, c_scale(pk, ct, r_scalar), enc_rows[responder - 1][c]
            )
            out_payload += serialize_ciphertext(pk, blinded)
        if off != len(msg.payload):
            raise ProtocolError("trailing bytes in response upload")
        self._delivered += 1
        deliver = Outbound(
            to=querier,
            msg=WireMessage(
                msg_type=MsgType.MASKED_RESPONSE_DELIVER,
                round=msg.round,
                sender=responder,
                receiver=querier,
                slot=slot,
                payload=out_payload,
            ),
            kind=KIND_CIPHERTEXT,
        )
        return [deliver] + self._maybe_advance()

    def _maybe_advance(self) -> list[Outbound]:
        if not self.phase.startswith("round"):
            return []
        n = self.cfg.n_clients
        total_slots = sum(self._slot_counts.values())
        if (
            self._shares_fwd == n * (n - 1)
            and self._queries_fwd == (n - 1) * total_slots
            and self._delivered == n * total_slots
        ):
            if self.round_idx < self.cfg.rounds:
                return self._begin_round(self.round_idx + 1)
            return self._finish()
        return []

    def _finish(self) -> list[Outbound]:
        self.phase = "done"
        self.finished = True
        return [
            Outbound(
                to=cid,
                msg=_setup_msg(SERVER_ID, cid, SETUP_DONE, b""),
                kind=KIND_PUBLIC,
            )
            for cid in self._client_ids()
        ]
