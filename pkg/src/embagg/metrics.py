"""Round metrics: per-party, per-phase traffic and timing accounting.

Every frame that crosses a link is recorded once (sender of the link, not
the logical originator in the header), with its framed size and its payload
size kept separate — protocol cost analysis cares about payload bytes, the
framing overhead is transport detail.  Offline precomputation (query
generation, relay blinding material) is accounted apart from online handler
time so a config with precomputation disabled shows zero offline columns.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:  # pragma: no cover
    from .transport import TranscriptEntry

__all__ = ["PHASES", "phase_of", "MetricsCollector", "party_label"]

# msg_type name -> phase bucket
_PHASE_BY_TYPE = {
    "SETUP": "setup",
    "UNION_SHARE": "union",
    "UNION_PARTIAL_SUM": "union",
    "UNION_BROADCAST": "union",
    "SHARE_UPLOAD": "sharing",
    "SHARE_FORWARD": "sharing",
    "QUERY_UPLOAD": "query",
    "QUERY_FORWARD": "query",
    "RESPONSE_UPLOAD": "response",
    "MASKED_RESPONSE_DELIVER": "deliver",
    "ABORT": "abort",
}

PHASES = ("setup", "union", "sharing", "query", "response", "deliver", "abort")


def phase_of(msg_type_name: str) -> str:
    return _PHASE_BY_TYPE[msg_type_name]


def party_label(party_id: int) -> str:
    return "server" if party_id == 0 else f"client{party_id}"


@dataclass
class _Cell:
    messages: int = 0
    payload_bytes: int = 0
    frame_bytes: int = 0


class MetricsCollector:
    """Accumulates traffic, handler time, and offline cost per party."""

    def __init__(self) -> None:
        self._traffic: dict[tuple[str, int], _Cell] = defaultdict(_Cell)
        self._time: dict[tuple[str, int], float] = defaultdict(float)
        self._offline_seconds: dict[int, float] = defaultdict(float)
        self._offline_storage: dict[int, int] = defaultdict(int)

    # -- recording ---------------------------------------------------------

    def record_frame(
        self, link_sender: int, phase: str, frame_len: int, payload_len: int
    ) -> None:
        cell = self._traffic[(phase, link_sender)]
        cell.messages += 1
        cell.frame_bytes += frame_len
        cell.payload_bytes += payload_len

    def add_time(self, party: int, phase: str, seconds: float) -> None:
        self._time[(phase, party)] += seconds

    def add_offline(self, party: int, seconds: float = 0.0, storage_bytes: int = 0) -> None:
        self._offline_seconds[party] += seconds
        self._offline_storage[party] += storage_bytes

    # -- queries -----------------------------------------------------------

    def sent_payload_bytes(self, party: int, phase: str) -> int:
        return self._traffic[(phase, party)].payload_bytes

    def sent_messages(self, party: int, phase: str) -> int:
        return self._traffic[(phase, party)].messages

    def total_payload_bytes(self) -> int:
        return sum(c.payload_bytes for c in self._traffic.values())

    def total_frame_bytes(self) -> int:
        return sum(c.frame_bytes for c in self._traffic.values())

    def total_messages(self) -> int:
        return sum(c.messages for c in self._traffic.values())

    def to_dict(self) -> dict:
        parties = sorted({pid for _, pid in self._traffic} | set(self._offline_seconds))
        out: dict = {"phases": {}, "offline": {}, "handler_seconds": {}, "totals": {}}
        for phase in PHASES:
            row = {}
            for pid in parties:
                cell = self._traffic.get((phase, pid))
                if cell is not None and cell.messages:
                    row[party_label(pid)] = {
                        "messages": cell.messages,
                        "payload_bytes": cell.payload_bytes,
                        "frame_bytes": cell.frame_bytes,
                    }
            if row:
                out["phases"][phase] = row
        for pid in parties:
            if self._offline_seconds[pid] or self._offline_storage[pid]:
                out["offline"][party_label(pid)] = {
                    "seconds": self._offline_seconds[pid],
                    "storage_bytes": self._offline_storage[pid],
                }
        handler: dict[str, float] = defaultdict(float)
        for (_, pid), secs in self._time.items():
            handler[party_label(pid)] += secs
        out["handler_seconds"] = dict(handler)
        out["totals"] = {
            "messages": self.total_messages(),
            "payload_bytes": self.total_payload_bytes(),
            "frame_bytes": self.total_frame_bytes(),
        }
        return out

    # -- cross-checks ------------------------------------------------------

    @staticmethod
    def totals_from_transcript(entries: Iterable["TranscriptEntry"]) -> dict:
        """Independent recount straight off the transcript, for the
        metrics-vs-transcript accounting identity."""
        messages = payload = framed = 0
        for e in entries:
            messages += 1
            payload += len(e.msg.payload)
            framed += len(e.frame)
        return {"messages": messages, "payload_bytes": payload, "frame_bytes": framed}
