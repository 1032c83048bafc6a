"""Wire framing, a deterministic in-process simulator, and TCP transport.

Topology is a star: clients talk only to the relay server (party id 0), and
client-addressed traffic is re-framed by the relay (upload / forward type
pairs).  A frame is::

    4-byte big-endian length   (covers header + payload)
    14-byte header: version u8 | msg_type u8 | round u32 | sender u16 |
                    receiver u16 | slot u32
    payload bytes

``sender``/``receiver`` are the logical endpoints (a forwarded share keeps
its originator); the link endpoints are implied by who physically emits the
frame.  The simulator delivers messages one at a time under a seeded
schedule that always respects per-sender FIFO order — the protocol state
machines must produce identical results under any such interleaving, and
tests drive that.  The TCP transport moves the very same frames over
loopback sockets; with a fixed config seed the two transports emit
byte-identical payload frames.
"""

from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field as dc_field
from enum import IntEnum
from typing import Protocol

from .metrics import MetricsCollector, phase_of
from .rng import ByteSampler, derive_seed

logger = logging.getLogger(__name__)

__all__ = [
    "WIRE_VERSION",
    "MsgType",
    "WireMessage",
    "Outbound",
    "TranscriptEntry",
    "TransportError",
    "DeadlockError",
    "encode_frame",
    "decode_frame",
    "SimNetwork",
    "TcpServerHost",
    "TcpClientHost",
]

WIRE_VERSION = 1
_HEADER = struct.Struct(">BBIHHI")  # version, msg_type, round, sender, receiver, slot
HEADER_LEN = _HEADER.size  # 14
MAX_PAYLOAD = (1 << 32) - HEADER_LEN - 1


class TransportError(RuntimeError):
    """Malformed frame, broken link, or star-topology violation."""


class DeadlockError(TransportError):
    """No deliverable message remains but protocol state is incomplete."""


class MsgType(IntEnum):
    SETUP = 0
    UNION_SHARE = 1
    UNION_PARTIAL_SUM = 2
    UNION_BROADCAST = 3
    SHARE_UPLOAD = 4
    SHARE_FORWARD = 5
    QUERY_UPLOAD = 6
    QUERY_FORWARD = 7
    RESPONSE_UPLOAD = 8
    MASKED_RESPONSE_DELIVER = 9
    ABORT = 10


# payload privacy kinds attached out-of-band by the producing party
KIND_MASKED = "masked"
KIND_CIPHERTEXT = "ciphertext"
KIND_PUBLIC = "public"
KIND_PLAIN = "plain"  # only ever produced by the leak-raw-shares sabotage hook


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    round: int
    sender: int
    receiver: int
    slot: int
    payload: bytes
    version: int = WIRE_VERSION


@dataclass(frozen=True)
class Outbound:
    """A message queued by a party, with its link target and payload kind."""

    to: int
    msg: WireMessage
    kind: str


@dataclass(frozen=True)
class TranscriptEntry:
    link_sender: int
    link_receiver: int
    frame: bytes
    msg: WireMessage
    kind: str

    @property
    def phase(self) -> str:
        return phase_of(self.msg.msg_type.name)


def encode_frame(msg: WireMessage) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise TransportError(f"payload of {len(msg.payload)} bytes exceeds frame limit")
    header = _HEADER.pack(
        msg.version, int(msg.msg_type), msg.round, msg.sender, msg.receiver, msg.slot
    )
    body = header + msg.payload
    return len(body).to_bytes(4, "big") + body


def decode_frame(data: bytes) -> WireMessage:
    """Decode one complete frame (length prefix included)."""
    if len(data) < 4 + HEADER_LEN:
        raise TransportError(f"frame of {len(data)} bytes is shorter than a header")
    body_len = int.from_bytes(data[:4], "big")
    if body_len != len(data) - 4:
        raise TransportError(
            f"frame length field says {body_len}, body has {len(data) - 4} bytes"
        )
    version, mtype, round_idx, sender, receiver, slot = _HEADER.unpack(
        data[4 : 4 + HEADER_LEN]
    )
    if version != WIRE_VERSION:
        raise TransportError(f"unsupported wire version {version}")
    try:
        msg_type = MsgType(mtype)
    except ValueError as exc:
        raise TransportError(f"unknown message type {mtype}") from exc
    return WireMessage(
        msg_type=msg_type,
        round=round_idx,
        sender=sender,
        receiver=receiver,
        slot=slot,
        payload=data[4 + HEADER_LEN :],
        version=version,
    )


class Participant(Protocol):  # pragma: no cover - typing aid
    party_id: int
    finished: bool

    def start(self) -> list[Outbound]: ...

    def on_message(self, msg: WireMessage) -> list[Outbound]: ...

    def state_summary(self) -> str: ...


def _check_link(link_sender: int, to: int) -> None:
    if link_sender != 0 and to != 0:
        raise TransportError(
            f"star topology violated: client {link_sender} addressed client {to}"
        )


# -- deterministic simulator ------------------------------------------------


@dataclass
class DeliverySchedule:
    """Seeded choice of which sender's FIFO queue delivers next."""

    policy: str = "fifo-random"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.policy not in ("fifo-random", "round-robin"):
            raise TransportError(f"unknown schedule policy {self.policy!r}")
        self._sampler = ByteSampler(derive_seed(b"schedule", self.policy, self.seed))
        self._rr_next = 0

    def pick(self, nonempty: list[int]) -> int:
        if self.policy == "round-robin":
            span = max(nonempty) + 1
            while True:
                candidate = self._rr_next % span
                self._rr_next += 1
                if candidate in nonempty:
                    return candidate
        return nonempty[self._sampler.int_below(len(nonempty))]


class SimNetwork:
    """Deterministic star-topology message pump over in-process parties."""

    def __init__(
        self,
        server: Participant,
        clients: dict[int, Participant],
        schedule: DeliverySchedule | None = None,
        collector: MetricsCollector | None = None,
    ):
        self.server = server
        self.clients = dict(clients)
        self.parties: dict[int, Participant] = {0: server, **self.clients}
        self.schedule = schedule or DeliverySchedule()
        self.collector = collector or MetricsCollector()
        self.transcript: list[TranscriptEntry] = []
        self._queues: dict[int, list[Outbound]] = {pid: [] for pid in self.parties}

    def _enqueue(self, link_sender: int, outs: list[Outbound]) -> None:
        for out in outs:
            _check_link(link_sender, out.to)
            if out.to not in self.parties:
                raise TransportError(f"message addressed to unknown party {out.to}")
            self._queues[link_sender].append(out)

    def run(self, max_steps: int = 10_000_000) -> list[TranscriptEntry]:
        for pid in sorted(self.parties):
            t0 = time.perf_counter()
            outs = self.parties[pid].start()
            self.collector.add_time(pid, "setup", time.perf_counter() - t0)
            self._enqueue(pid, outs)
        steps = 0
        while True:
            nonempty = sorted(pid for pid, q in self._queues.items() if q)
            if not nonempty:
                break
            if steps >= max_steps:
                raise DeadlockError("simulator exceeded its step budget")
            steps += 1
            sender = self.schedule.pick(nonempty)
            out = self._queues[sender].pop(0)
            frame = encode_frame(out.msg)
            self.transcript.append(
                TranscriptEntry(
                    link_sender=sender,
                    link_receiver=out.to,
                    frame=frame,
                    msg=out.msg,
                    kind=out.kind,
                )
            )
            phase = phase_of(out.msg.msg_type.name)
            self.collector.record_frame(sender, phase, len(frame), len(out.msg.payload))
            target = self.parties[out.to]
            t0 = time.perf_counter()
            replies = target.on_message(decode_frame(frame))
            self.collector.add_time(out.to, phase, time.perf_counter() - t0)
            self._enqueue(out.to, replies)
        unfinished = [pid for pid, node in self.parties.items() if not node.finished]
        if unfinished:
            dump = "; ".join(self.parties[pid].state_summary() for pid in unfinished)
            raise DeadlockError(
                f"no deliverable messages but parties {unfinished} are unfinished: {dump}"
            )
        return self.transcript


# -- TCP transport ----------------------------------------------------------


def _read_exact(conn: socket.socket, k: int) -> bytes:
    buf = bytearray()
    while len(buf) < k:
        chunk = conn.recv(k - len(buf))
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame(conn: socket.socket) -> bytes:
    prefix = _read_exact(conn, 4)
    body_len = int.from_bytes(prefix, "big")
    if not HEADER_LEN <= body_len <= HEADER_LEN + MAX_PAYLOAD:
        raise TransportError(f"implausible frame length {body_len}")
    return prefix + _read_exact(conn, body_len)


@dataclass
class _ConnEvent:
    client_id: int
    frame: bytes | None  # None == connection lost
    error: str | None = None


class TcpServerHost:
    """Runs the relay state machine over real sockets.

    Accepts exactly ``n_clients`` connections (each client identifies itself
    by the sender field of its first frame), then pumps frames between the
    sockets and the sequential server node.  All received and sent frames
    are recorded in a transcript so a loopback run can be compared
    frame-for-frame with the simulator.
    """

    def __init__(
        self,
        server: Participant,
        n_clients: int,
        host: str = "127.0.0.1",
        port: int = 0,
        collector: MetricsCollector | None = None,
        timeout: float = 60.0,
    ):
        self.node = server
        self.n_clients = n_clients
        self.timeout = timeout
        self.collector = collector or MetricsCollector()
        self.transcript: list[TranscriptEntry] = []
        self._sock = socket.create_server((host, port))
        self._sock.settimeout(timeout)
        self.address = self._sock.getsockname()
        self._conns: dict[int, socket.socket] = {}
        self._events: "queue.Queue[_ConnEvent]" = queue.Queue()

    def _reader(self, client_id: int, conn: socket.socket) -> None:
        try:
            while True:
                self._events.put(_ConnEvent(client_id, read_frame(conn)))
        except TransportError as exc:
            self._events.put(_ConnEvent(client_id, None, str(exc)))
        except OSError as exc:
            self._events.put(_ConnEvent(client_id, None, str(exc)))

    def _send(self, outs: list[Outbound]) -> None:
        for out in outs:
            _check_link(0, out.to)
            frame = encode_frame(out.msg)
            self.transcript.append(
                TranscriptEntry(0, out.to, frame, out.msg, out.kind)
            )
            self.collector.record_frame(
                0, phase_of(out.msg.msg_type.name), len(frame), len(out.msg.payload)
            )
            self._conns[out.to].sendall(frame)

    def run(self) -> list[TranscriptEntry]:
        try:
            return self._run()
        finally:
            for conn in self._conns.values():
                try:
                    conn.close()
                except OSError:
                    pass
            self._sock.close()

    def _run(self) -> list[TranscriptEntry]:
        deadline = time.monotonic() + self.timeout
        pending: list[tuple[int, bytes]] = []
        while len(self._conns) < self.n_clients:
            if time.monotonic() > deadline:
                raise TransportError(
                    f"only {len(self._conns)}/{self.n_clients} clients connected"
                )
            conn, _addr = self._sock.accept()
            conn.settimeout(self.timeout)
            first = read_frame(conn)
            cid = decode_frame(first).sender
            if cid in self._conns or not 1 <= cid <= self.n_clients:
                conn.close()
                raise TransportError(f"bad client id {cid} on connect")
            self._conns[cid] = conn
            pending.append((cid, first))
        for cid, conn in self._conns.items():
            threading.Thread(
                target=self._reader, args=(cid, conn), daemon=True
            ).start()
        self._send(self.node.start())
        for cid, frame in sorted(pending):
            self._handle(cid, frame)
        while not self.node.finished:
            try:
                event = self._events.get(timeout=self.timeout)
            except queue.Empty:
                raise DeadlockError(
                    f"relay idle for {self.timeout}s: {self.node.state_summary()}"
                ) from None
            if event.frame is None:
                if self.node.finished:
                    break
                raise TransportError(
                    f"lost client {event.client_id}: {event.error}"
                )
            self._handle(event.client_id, event.frame)
        return self.transcript

    def _handle(self, client_id: int, frame: bytes) -> None:
        msg = decode_frame(frame)
        phase = phase_of(msg.msg_type.name)
        # The client is the link sender of this frame; record it on arrival
        # so the server-side transcript sees every frame exactly once.
        self.transcript.append(
            TranscriptEntry(client_id, 0, frame, msg, _incoming_kind(msg))
        )
        self.collector.record_frame(client_id, phase, len(frame), len(msg.payload))
        t0 = time.perf_counter()
        outs = self.node.on_message(msg)
        self.collector.add_time(0, phase, time.perf_counter() - t0)
        self._send(outs)


def _incoming_kind(msg: WireMessage) -> str:
    # Kind metadata is produced by the sender and not carried on the wire;
    # the server-side record uses the structural default for the type.  The
    # sabotage hook is only observable in sender-side transcripts.
    defaults = {
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
    return defaults[msg.msg_type]


class TcpClientHost:
    """Runs one client state machine against a TCP relay."""

    def __init__(
        self,
        client: Participant,
        host: str,
        port: int,
        timeout: float = 60.0,
    ):
        self.node = client
        self.addr = (host, port)
        self.timeout = timeout

    def run(self) -> None:
        with socket.create_connection(self.addr, timeout=self.timeout) as conn:
            outs = self.node.start()
            if not outs:
                raise TransportError("client produced no opening frame")
            for out in outs:
                _check_link(self.node.party_id, out.to)
                conn.sendall(encode_frame(out.msg))
            while not self.node.finished:
                msg = decode_frame(read_frame(conn))
                for out in self.node.on_message(msg):
                    _check_link(self.node.party_id, out.to)
                    conn.sendall(encode_frame(out.msg))
