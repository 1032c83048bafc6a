"""Command-line interface: exit codes, output formats, and the TCP pair."""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time

import pytest

import embagg.cli as cli
from embagg.audit import AuditReport
from embagg.config import DeploymentConfig


SEED = "5e" * 32


def write_cfg(tmp_path, **overrides) -> str:
    base = dict(
        n_clients=3,
        threshold=1,
        dim=1,
        rounds=1,
        entities={1: ["earth"], 2: ["moon"], 3: ["earth"]},
        seed=SEED,
        scale_bits=4,
        insecure_crypto=True,
        paillier_bits=64,
    )
    base.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(DeploymentConfig(**base).to_json())
    return str(path)


def test_run_reports_json_and_exits_clean(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "report.json"
    rc = cli.main(["run", "--config", cfg, "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["oracle_match"] is True
    assert report["aborted"] is None
    assert report["transport"] == "sim"
    assert report["union_size"] == 2


def test_run_honors_overrides_and_payload_check(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    rc = cli.main(["run", "--config", cfg, "--rounds", "2", "--check-payloads"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["rounds"] == 2
    assert report["payload_violations"] == []
    assert set(report["recovered"]["1"]) == {"1", "2"}


def test_run_rejects_invalid_configs_with_the_full_reason(tmp_path, capsys):
    cfg = write_cfg(tmp_path, threshold=2)
    rc = cli.main(["run", "--config", cfg])
    assert rc == cli.EXIT_CONFIG == 2
    err = capsys.readouterr().err
    assert "collusion threshold must satisfy T < N/2" in err


def test_run_reads_the_seed_from_the_environment(tmp_path, capsys, monkeypatch):
    cfg = write_cfg(tmp_path, seed=None)
    monkeypatch.setenv("EMBAGG_SEED", SEED)
    rc = cli.main(["run", "--config", cfg])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["seed"] == SEED


def test_demo_walks_through_and_matches_the_oracle(capsys):
    rc = cli.main(["demo"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "oracle match: True" in out
    assert "client nodes (3, 4, 5)" in out
    assert "code nodes (1, 2)" in out


def test_bench_emits_the_accounting_csv(capsys):
    rc = cli.main(["bench", "--clients", "5", "--dim", "2", "--thresholds", "1,2", "--pool", "2"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == (
        "clients,threshold,blocks,phase,messages,payload_bytes,frame_bytes,"
        "offline_seconds,offline_storage_bytes"
    )
    assert len(lines) == 1 + 2 * 5  # five phases per threshold
    assert all(line.startswith("5,") for line in lines[1:])


def test_audit_command_prints_reports_and_the_scale_note(monkeypatch, capsys):
    # the full enumeration suite runs elsewhere; here the command plumbing
    ok = AuditReport(
        name="x", field_p=17, draws=10, expect="same", same=True, ok=True, detail=""
    )
    monkeypatch.setattr(cli, "run_privacy_audits", lambda: [ok])
    assert cli.main(["audit"]) == 0
    out = capsys.readouterr().out
    assert '"verdict": "pass"' in out
    assert "desk scale" in out
    bad = AuditReport(
        name="x", field_p=17, draws=10, expect="same", same=False, ok=False, detail=""
    )
    monkeypatch.setattr(cli, "run_privacy_audits", lambda: [bad])
    assert cli.main(["audit"]) == cli.EXIT_AUDIT == 4


def test_serve_and_clients_complete_a_round_over_tcp(tmp_path):
    cfg_path = write_cfg(tmp_path, dim=2)
    clients: list[subprocess.Popen] = []
    serve = subprocess.Popen(
        [sys.executable, "-m", "embagg", "serve", "--config", cfg_path, "--port", "0",
         "--timeout", "60"],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        banner = serve.stdout.readline().strip()
        assert banner.startswith("relay listening on ")
        host, port = banner.rsplit(" ", 1)[-1].rsplit(":", 1)
        clients = [
            subprocess.Popen(
                [sys.executable, "-m", "embagg", "client", "--config", cfg_path,
                 "--client-id", str(cid), "--host", host, "--port", port,
                 "--timeout", "60"],
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
            )
            for cid in (1, 2, 3)
        ]
        outs = []
        for proc in clients:
            out, err = proc.communicate(timeout=90)
            assert proc.returncode == 0, err
            outs.append(out)
        s_out, s_err = serve.communicate(timeout=60)
        assert serve.returncode == 0, s_err
        assert "relay finished" in s_out
    finally:
        for proc in [serve, *clients]:
            if proc.poll() is None:
                proc.kill()
    # owners of the shared entity print identical recovered values
    earth_lines = [
        line for out in (outs[0], outs[2]) for line in out.splitlines()
        if line.startswith("round 1 earth")
    ]
    assert len(earth_lines) == 2 and earth_lines[0] == earth_lines[1]
    assert any("round 1 moon" in line for line in outs[1].splitlines())
