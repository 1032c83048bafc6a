"""End-to-end deployment drivers and the plaintext reference oracle.

``run_sim`` executes a whole deployment inside the deterministic in-process
simulator; ``run_tcp_loopback`` executes the identical node state machines
over real loopback sockets.  Both return a :class:`RunResult` that pairs the
protocol's recovered per-entity averages with an independent plaintext
replay (same update stubs, same quantization grid), so callers can assert
exact agreement — ``oracle_match`` is bit-for-bit Fraction equality, never a
float tolerance.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Any

from .config import DeploymentConfig, Derived
from .metrics import MetricsCollector
from .protocol import (
    ClientNode,
    GlobalEmbedding,
    ServerNode,
    Stub,
    build_stub,
    oracle_aggregate,
)
from .transport import (
    DeliverySchedule,
    SimNetwork,
    TcpClientHost,
    TcpServerHost,
    TranscriptEntry,
)

__all__ = ["RunResult", "build_deployment", "oracle_replay", "run_sim", "run_tcp_loopback"]


@dataclass
class Deployment:
    """All parties plus the plaintext inputs they were built from."""

    cfg: DeploymentConfig
    derived: Derived
    server: ServerNode
    clients: dict[int, ClientNode]
    assignment: dict[int, list[str]]
    embeddings: dict[int, dict[str, list[float]]]
    stub: Stub


@dataclass
class RunResult:
    cfg: DeploymentConfig
    seed: str
    transport: str
    aborted: str | None
    union_size: int
    recovered: dict[int, dict[int, dict[str, GlobalEmbedding]]]  # cid -> round -> name
    oracle: dict[int, dict[str, tuple[Fraction, ...]]]  # round -> name -> averages
    oracle_match: bool
    mismatches: list[str]
    metrics: dict[str, Any]
    transcript: list[TranscriptEntry] = dc_field(repr=False, default_factory=list)
    deployment: Deployment | None = dc_field(repr=False, default=None)

    def to_jsonable(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "transport": self.transport,
            "aborted": self.aborted,
            "union_size": self.union_size,
            "rounds": self.cfg.rounds,
            "oracle_match": self.oracle_match,
            "mismatches": self.mismatches,
            "recovered": {
                cid: {
                    rnd: {
                        name: [str(v) for v in emb.values]
                        for name, emb in per_round.items()
                    }
                    for rnd, per_round in per_cid.items()
                }
                for cid, per_cid in self.recovered.items()
            },
            "metrics": self.metrics,
        }


def build_deployment(cfg: DeploymentConfig, stub: Stub | None = None) -> Deployment:
    """Materialize every party of one deployment from a validated config."""
    cfg.check()
    cfg.resolve_seed()
    derived = cfg.derive()
    assignment = cfg.materialize_entities()
    embeddings = cfg.initial_embeddings(assignment)
    stub = stub or build_stub(cfg)
    server = ServerNode(cfg, derived)
    clients = {
        cid: ClientNode(
            cid, cfg, derived, assignment[cid], embeddings[cid], stub=stub
        )
        for cid in range(1, cfg.n_clients + 1)
    }
    return Deployment(cfg, derived, server, clients, assignment, embeddings, stub)


def oracle_replay(dep: Deployment) -> dict[int, dict[str, tuple[Fraction, ...]]]:
    """Plaintext replay: apply the stubs round by round, average exactly.

    Feeds each stub the float rendering of the previous round's exact
    averages — precisely the values protocol clients would feed it — so the
    two paths stay on identical trajectories.
    """
    scale = 1 << dep.cfg.scale_bits
    locals_: dict[int, dict[str, list[float]]] = {
        cid: {e: list(vec) for e, vec in per.items()}
        for cid, per in dep.embeddings.items()
    }
    out: dict[int, dict[str, tuple[Fraction, ...]]] = {}
    for round_idx in range(1, dep.cfg.rounds + 1):
        prev = out.get(round_idx - 1, {})
        for cid, names in dep.assignment.items():
            for e in sorted(names):
                last = prev.get(e)
                locals_[cid][e] = dep.stub(
                    round_idx,
                    cid,
                    e,
                    locals_[cid][e],
                    [float(v) for v in last] if last is not None else None,
                )
        out[round_idx] = oracle_aggregate(dep.assignment, locals_, scale)
    return out


def _assemble(
    dep: Deployment,
    transport: str,
    transcript: list[TranscriptEntry],
    collector: MetricsCollector,
) -> RunResult:
    cfg = dep.cfg
    collector.add_offline(
        0, dep.server.offline_seconds, dep.server.offline_storage_bytes
    )
    for cid, node in dep.clients.items():
        collector.add_offline(cid, node.offline_seconds, node.offline_storage_bytes)

    aborted = dep.server.aborted
    for node in dep.clients.values():
        aborted = aborted or node.aborted

    recovered = {cid: dict(node.results) for cid, node in dep.clients.items()}
    oracle = oracle_replay(dep) if aborted is None else {}

    mismatches: list[str] = []
    if aborted is None:
        for cid, node in dep.clients.items():
            for round_idx in range(1, cfg.rounds + 1):
                got = recovered[cid].get(round_idx, {})
                for e in dep.assignment[cid]:
                    want = oracle[round_idx].get(e)
                    have = got.get(e)
                    if have is None:
                        mismatches.append(
                            f"client {cid} round {round_idx} entity {e}: missing"
                        )
                    elif want is None or have.values != want:
                        mismatches.append(
                            f"client {cid} round {round_idx} entity {e}: "
                            f"{have.values} != {want}"
                        )
    else:
        mismatches.append(f"aborted: {aborted}")

    return RunResult(
        cfg=cfg,
        seed=cfg.seed or "",
        transport=transport,
        aborted=aborted,
        union_size=len(dep.server.union_images),
        recovered=recovered,
        oracle=oracle,
        oracle_match=aborted is None and not mismatches,
        mismatches=mismatches,
        metrics=collector.to_dict(),
        transcript=transcript,
        deployment=dep,
    )


def run_sim(
    cfg: DeploymentConfig,
    stub: Stub | None = None,
    schedule: DeliverySchedule | None = None,
) -> RunResult:
    """Run one full deployment in the deterministic simulator."""
    dep = build_deployment(cfg, stub)
    schedule = schedule or DeliverySchedule(cfg.schedule, cfg.schedule_seed)
    collector = MetricsCollector()
    net = SimNetwork(dep.server, dep.clients, schedule, collector)
    transcript = net.run()
    return _assemble(dep, "sim", transcript, collector)


def run_tcp_loopback(
    cfg: DeploymentConfig, stub: Stub | None = None, timeout: float = 60.0
) -> RunResult:
    """Run the same state machines over loopback TCP sockets.

    The returned transcript is the relay-side record: every frame it
    received and every frame it sent, which together cover every frame on
    the wire exactly once.
    """
    dep = build_deployment(cfg, stub)
    collector = MetricsCollector()
    host = TcpServerHost(
        dep.server, cfg.n_clients, collector=collector, timeout=timeout
    )
    addr = host.address
    transcript: list[TranscriptEntry] = []
    server_err: list[BaseException] = []

    def serve() -> None:
        try:
            transcript.extend(host.run())
        except BaseException as exc:  # surfaced after join
            server_err.append(exc)

    server_thread = threading.Thread(target=serve, daemon=True)
    server_thread.start()

    client_errs: dict[int, BaseException] = {}

    def drive(cid: int) -> None:
        try:
            TcpClientHost(dep.clients[cid], addr[0], addr[1], timeout=timeout).run()
        except BaseException as exc:
            client_errs[cid] = exc

    threads = [
        threading.Thread(target=drive, args=(cid,), daemon=True)
        for cid in sorted(dep.clients)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=timeout)
    server_thread.join(timeout=timeout)
    if server_err:
        raise server_err[0]
    for cid, exc in sorted(client_errs.items()):
        raise exc
    if server_thread.is_alive() or any(t.is_alive() for t in threads):
        raise TimeoutError("tcp loopback run did not finish in time")
    return _assemble(dep, "tcp", transcript, collector)
