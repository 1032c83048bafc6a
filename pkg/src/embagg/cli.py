"""Command-line front end.

Subcommands:

* ``run``   — execute one full deployment (simulator or loopback TCP) and
  print a JSON report with recovered averages and the oracle verdict.
* ``demo``  — a small three-client walkthrough with the intermediate
  geometry printed, then a live run.
* ``bench`` — per-phase traffic accounting across a threshold sweep, CSV.
* ``audit`` — the desk-scale privacy audit suite, JSON verdicts.
* ``serve`` / ``client`` — real TCP endpoints for running the parties in
  separate processes on one config.

Exit codes: 0 success, 2 invalid config (every violation listed), 3
protocol abort, 4 audit failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

from .audit import run_privacy_audits, server_payload_audit
from .config import ConfigError, DeploymentConfig
from .poly import ProtocolParams, partition_count
from .runner import build_deployment, run_sim, run_tcp_loopback
from .transport import TcpClientHost, TcpServerHost

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_AUDIT = 4

DESK_SCALE_NOTE = (
    "note: audits enumerate complete randomness spaces of miniature instances; "
    "they certify the mechanism at desk scale, not any particular large deployment."
)


def _load_config(args: argparse.Namespace) -> DeploymentConfig:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = DeploymentConfig.from_json(fh.read())
    else:
        # bare-run default: small geometry, real-size Paillier keys
        cfg = DeploymentConfig(n_clients=3, threshold=1, dim=2, paillier_bits=512)
    seed = getattr(args, "seed", None) or os.environ.get("EMBAGG_SEED")
    if seed:
        cfg.seed = seed
    if getattr(args, "rounds", None) is not None:
        cfg.rounds = args.rounds
    if getattr(args, "insecure_crypto", False):
        cfg.insecure_crypto = True
        if cfg.paillier_bits >= 512:
            cfg.paillier_bits = 64
    cfg.check()
    return cfg


def _fail_config(exc: ConfigError) -> int:
    print("invalid configuration:", file=sys.stderr)
    for line in str(exc).splitlines():
        print(f"  {line}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        return _fail_config(exc)
    runner = run_tcp_loopback if args.transport == "tcp" else run_sim
    result = runner(cfg)
    report = result.to_jsonable()
    if args.check_payloads:
        report["payload_violations"] = server_payload_audit(result.transcript)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if result.aborted is not None:
        return EXIT_ABORT
    if not result.oracle_match:
        print("recovered averages disagree with the plaintext oracle", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_demo(args: argparse.Namespace) -> int:
    cfg = DeploymentConfig(
        n_clients=3,
        threshold=1,
        dim=2,
        rounds=1,
        entities={1: ["earth"], 2: ["moon"], 3: ["earth"]},
        seed=args.seed or "0" * 32,
        insecure_crypto=True,
        paillier_bits=64,
    )
    try:
        cfg.check()
    except ConfigError as exc:
        return _fail_config(exc)
    derived = cfg.derive()
    k = partition_count(cfg.n_clients, cfg.threshold)
    params = ProtocolParams.build(
        derived.field, cfg.n_clients, cfg.threshold, n_entities=2, dim=cfg.dim
    )
    print("three clients, one untrusted relay, collusion threshold T=1")
    print(f"  field modulus p = {derived.field.p}")
    print(f"  blocks per embedding K = {k}, block length = {params.block_len}")
    print(f"  code nodes {params.points.code_nodes} (data then noise)")
    print(f"  client nodes {params.points.client_nodes}")
    print(f"  share polynomial degree <= {params.share_degree}; "
          f"blinded response curve degree {params.product_degree}")
    print()
    result = run_sim(cfg)
    print(f"union holds {result.union_size} entities; "
          f"{len(result.transcript)} frames crossed the relay")
    for cid in sorted(result.recovered):
        for rnd in sorted(result.recovered[cid]):
            for name, emb in sorted(result.recovered[cid][rnd].items()):
                vals = ", ".join(f"{v} ({float(v):.6f})" for v in emb.values)
                print(f"  client {cid} round {rnd} {name}: [{vals}]")
    print(f"oracle match: {result.oracle_match}")
    return EXIT_OK if result.oracle_match else EXIT_ABORT


def cmd_bench(args: argparse.Namespace) -> int:
    thresholds = [int(x) for x in args.thresholds.split(",") if x]
    rows = []
    for t in thresholds:
        entities = {
            cid: [f"e{(cid - 1) % args.pool}"] for cid in range(1, args.clients + 1)
        }
        cfg = DeploymentConfig(
            n_clients=args.clients,
            threshold=t,
            dim=args.dim,
            rounds=1,
            entities=entities,
            seed=args.seed or "bench0001".encode().hex(),
            insecure_crypto=True,
            paillier_bits=64,
        )
        try:
            cfg.check()
        except ConfigError as exc:
            return _fail_config(exc)
        result = run_sim(cfg)
        k = partition_count(args.clients, t)
        m = result.metrics
        for phase in ("union", "sharing", "query", "response", "deliver"):
            per_phase = m["phases"].get(phase, {})
            rows.append(
                {
                    "clients": args.clients,
                    "threshold": t,
                    "blocks": k,
                    "phase": phase,
                    "messages": sum(v["messages"] for v in per_phase.values()),
                    "payload_bytes": sum(
                        v["payload_bytes"] for v in per_phase.values()
                    ),
                    "frame_bytes": sum(v["frame_bytes"] for v in per_phase.values()),
                    "offline_seconds": round(
                        sum(v["seconds"] for v in m["offline"].values()), 6
                    ),
                    "offline_storage_bytes": sum(
                        v["storage_bytes"] for v in m["offline"].values()
                    ),
                }
            )
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    reports = run_privacy_audits()
    print(json.dumps([r.to_dict() for r in reports], indent=2))
    print(DESK_SCALE_NOTE)
    return EXIT_OK if all(r.ok for r in reports) else EXIT_AUDIT


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        return _fail_config(exc)
    dep = build_deployment(cfg)
    host = TcpServerHost(
        dep.server, cfg.n_clients, host=args.host, port=args.port, timeout=args.timeout
    )
    print(f"relay listening on {host.address[0]}:{host.address[1]}", flush=True)
    host.run()
    if dep.server.aborted:
        print(f"aborted: {dep.server.aborted}", file=sys.stderr)
        return EXIT_ABORT
    print("relay finished")
    return EXIT_OK


def cmd_client(args: argparse.Namespace) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        return _fail_config(exc)
    dep = build_deployment(cfg)
    node = dep.clients[args.client_id]
    TcpClientHost(node, args.host, args.port, timeout=args.timeout).run()
    if node.aborted:
        print(f"aborted: {node.aborted}", file=sys.stderr)
        return EXIT_ABORT
    for rnd in sorted(node.results):
        for name, emb in sorted(node.results[rnd].items()):
            print(f"round {rnd} {name}: {[str(v) for v in emb.values]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embagg",
        description="Exact privacy-preserving embedding aggregation over an untrusted relay",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one deployment and report results")
    p_run.add_argument("--config", help="JSON config file")
    p_run.add_argument("--seed", help="hex master seed (or EMBAGG_SEED)")
    p_run.add_argument("--rounds", type=int, help="override round count")
    p_run.add_argument(
        "--transport", choices=("sim", "tcp"), default="sim", help="execution backend"
    )
    p_run.add_argument(
        "--insecure-crypto",
        action="store_true",
        help="allow toy key sizes (testing only)",
    )
    p_run.add_argument(
        "--check-payloads",
        action="store_true",
        help="include the relay payload audit in the report",
    )
    p_run.add_argument("--out", help="write the JSON report to a file")
    p_run.set_defaults(func=cmd_run)

    p_demo = sub.add_parser("demo", help="three-client walkthrough")
    p_demo.add_argument("--seed", help="hex master seed")
    p_demo.set_defaults(func=cmd_demo)

    p_bench = sub.add_parser("bench", help="traffic accounting sweep (CSV)")
    p_bench.add_argument("--clients", type=int, default=9)
    p_bench.add_argument("--dim", type=int, default=11)
    p_bench.add_argument("--thresholds", default="1,2,3")
    p_bench.add_argument("--pool", type=int, default=4, help="distinct entity count")
    p_bench.add_argument("--seed", help="hex master seed")
    p_bench.add_argument("--out", help="CSV output path (default stdout)")
    p_bench.set_defaults(func=cmd_bench)

    p_audit = sub.add_parser("audit", help="desk-scale privacy audits")
    p_audit.set_defaults(func=cmd_audit)

    p_serve = sub.add_parser("serve", help="run the relay on a TCP port")
    p_serve.add_argument("--config", required=True)
    p_serve.add_argument("--seed", help="hex master seed (or EMBAGG_SEED)")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=0)
    p_serve.add_argument("--timeout", type=float, default=120.0)
    p_serve.add_argument("--insecure-crypto", action="store_true")
    p_serve.set_defaults(func=cmd_serve)

    p_client = sub.add_parser("client", help="run one client against a TCP relay")
    p_client.add_argument("--config", required=True)
    p_client.add_argument("--seed", help="hex master seed (or EMBAGG_SEED)")
    p_client.add_argument("--client-id", type=int, required=True)
    p_client.add_argument("--host", default="127.0.0.1")
    p_client.add_argument("--port", type=int, required=True)
    p_client.add_argument("--timeout", type=float, default=120.0)
    p_client.add_argument("--insecure-crypto", action="store_true")
    p_client.set_defaults(func=cmd_client)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
