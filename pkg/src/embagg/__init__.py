"""Exact privacy-preserving embedding aggregation over an untrusted relay.

N clients each hold embeddings for a private subset of entities.  Every
round they jointly compute, for every entity anyone holds, the exact
average of its owners' embeddings — while the relay sees only masked or
encrypted payloads, no client learns who owns what or anyone else's
values, and even the number of owners behind each average stays hidden.
Tolerates up to T < N/2 colluding clients.

Entry points:

* :func:`embagg.runner.run_sim` / :func:`embagg.runner.run_tcp_loopback` —
  run a whole deployment from a :class:`embagg.config.DeploymentConfig`.
* ``embagg`` console script — see ``embagg --help``.
* :func:`embagg.audit.run_privacy_audits` — desk-scale privacy certificates.
"""

from __future__ import annotations

from .config import AuditOptions, ConfigError, DeploymentConfig
from .field import Field, FixedPointCodec, ReconstructionError
from .protocol import ClientNode, GlobalEmbedding, ProtocolError, ServerNode
from .runner import RunResult, build_deployment, run_sim, run_tcp_loopback

__version__ = "0.1.0"

__all__ = [
    "AuditOptions",
    "ConfigError",
    "DeploymentConfig",
    "Field",
    "FixedPointCodec",
    "ReconstructionError",
    "ClientNode",
    "ServerNode",
    "ProtocolError",
    "GlobalEmbedding",
    "RunResult",
    "build_deployment",
    "run_sim",
    "run_tcp_loopback",
    "__version__",
]
