"""Simulated network: FIFO links with latency/jitter/bandwidth and reliable byte streams.

Wire records (schema version ``WIRE_VERSION``)::

    {"v": 1, "t": <ns>, "src": <host>, "dst": <host>, "stream": <int>,
     "dir": "c2s" | "s2c", "kind": "SYN" | "DATA" | "ACK" | "FIN",
     "seq": <int>, "ack": <int>, "data": <hex>}

``seq`` is the byte offset of the first data byte in the sender's direction and
``ack`` the receiver's next expected offset in the opposite direction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Any, Callable, Optional

from .sim import MS, Sim

WIRE_VERSION = 1
RTO = 200 * MS
RTO_MAX = 3_200 * MS


@dataclass(slots=True)
class Segment:
    stream: int
    to_server: bool
    kind: str
    seq: int = 0
    ack: int = 0
    data: bytes = b""

    @property
    def end(self) -> int:
        return self.seq + len(self.data)

    def to_record(self) -> dict:
        return {"v": WIRE_VERSION, "stream": self.stream, "dir": "c2s" if self.to_server else "s2c",
                "kind": self.kind, "seq": self.seq, "ack": self.ack, "data": self.data.hex()}

    @classmethod
    def from_record(cls, rec: dict) -> "Segment":
        if rec.get("v") != WIRE_VERSION:
            raise ValueError(f"unsupported wire record version {rec.get('v')!r}")
        return cls(int(rec["stream"]), rec["dir"] == "c2s", rec["kind"], int(rec["seq"]),
                   int(rec["ack"]), bytes.fromhex(rec["data"]))


@dataclass
class SocketState:
    """Server-side stream state, as captured in checkpoints and rebuilt after failover."""
    sent_seq: int = 0
    acked_seq: int = 0
    rcv_seq: int = 0
    recv_queue: bytes = b""
    write_queue: bytes = b""

    @property
    def read_seq(self) -> int:
        return self.rcv_seq - len(self.recv_queue)

    def check(self) -> None:
        if not self.acked_seq <= self.sent_seq:
            raise ValueError("acked_seq beyond sent_seq")
        if len(self.write_queue) != self.sent_seq - self.acked_seq:
            raise ValueError("write_queue does not span [acked_seq, sent_seq)")
        if self.read_seq < 0:
            raise ValueError("recv_queue longer than rcv_seq")

    def to_plain(self) -> dict:
        return {"sent": self.sent_seq, "acked": self.acked_seq, "rcv": self.rcv_seq,
                "rq": self.recv_queue, "wq": self.write_queue}

    @classmethod
    def from_plain(cls, d: dict) -> "SocketState":
        return cls(d["sent"], d["acked"], d["rcv"], bytes(d["rq"]), bytes(d["wq"]))


class Link:
    __slots__ = ("latency", "jitter", "ns_per_byte", "last")

    def __init__(self, latency: int, jitter: int, bandwidth_bps: float):
        self.latency = latency
        self.jitter = jitter
        self.ns_per_byte = 8e9 / bandwidth_bps
        self.last = 0


class Network:
    def __init__(self, sim: Sim, rng):
        self.sim = sim
        self.rng = rng
        self.hosts: dict[str, Any] = {}
        self.links: dict[tuple[str, str], Link] = {}
        self.service_host: Optional[str] = None
        self.trace: Optional[Callable[[int, str, str, Any], None]] = None
        self.sent = 0

    def add_host(self, host) -> None:
        self.hosts[host.name] = host

    def connect(self, a: str, b: str, latency: int, jitter: int, bandwidth_bps: float) -> None:
        self.links[(a, b)] = Link(latency, jitter, bandwidth_bps)
        self.links[(b, a)] = Link(latency, jitter, bandwidth_bps)

    def send(self, src: str, dst: str, msg: Any, size: int = 64) -> bool:
        s = self.hosts[src]
        if not s.alive:
            return False
        link = self.links[(src, dst)]
        sim = self.sim
        delay = link.latency + int(self.rng.random() * link.jitter) + int(size * link.ns_per_byte)
        t = sim.now + delay
        if t < link.last:
            t = link.last
        link.last = t
        self.sent += 1
        if self.trace is not None:
            self.trace(sim.now, src, dst, msg)
        d = self.hosts[dst]
        sim.at(t, d.on_message, msg, src, owner=d)
        return True


class TraceWriter:
    """Writes stream segments crossing the network as JSON lines."""

    def __init__(self, fh: IO[str]):
        self.fh = fh
        fh.write(json.dumps({"format": "hybridrep-wire", "version": WIRE_VERSION}) + "\n")

    def __call__(self, t: int, src: str, dst: str, msg: Any) -> None:
        if isinstance(msg, Segment):
            rec = msg.to_record()
            rec.update(t=t, src=src, dst=dst)
            self.fh.write(json.dumps(rec) + "\n")


def read_trace(fh: IO[str]) -> list[tuple[dict, Segment]]:
    header = json.loads(fh.readline())
    if not isinstance(header, dict) or header.get("format") != "hybridrep-wire" or header.get("version") != WIRE_VERSION:
        raise ValueError("not a wire trace (or unsupported version)")
    out = []
    for line in fh:
        if line.strip():
            rec = json.loads(line)
            try:
                out.append((rec, Segment.from_record(rec)))
            except (KeyError, TypeError, AttributeError) as exc:
                raise ValueError(f"malformed trace record: {exc}") from None
    return out


class TcpEndpoint:
    """One end of a reliable, in-order byte stream.

    Receivers acknowledge every data segment immediately.  A single
    retransmission timer covers the oldest unacknowledged byte; on expiry all
    unacknowledged data is resent (go-back-N) and the timeout doubles.
    """

    def __init__(self, sim: Sim, stream: int, is_server: bool, transmit: Callable[[Segment], None],
                 owner: Any = None, rto: int = RTO):
        self.sim = sim
        self.stream = stream
        self.is_server = is_server
        self.transmit = transmit
        self.owner = owner
        self.rto = rto
        self._rto_cur = rto
        self._gen = 0
        self._armed = False
        self.snd_una = 0
        self.snd_nxt = 0
        self.wbuf = bytearray()
        self.rcv_nxt = 0
        self.rbuf = bytearray()
        self.on_readable: Optional[Callable[["TcpEndpoint"], None]] = None
        self.retransmits = 0

    # -- state -----------------------------------------------------------
    @property
    def read_seq(self) -> int:
        return self.rcv_nxt - len(self.rbuf)

    def state(self) -> SocketState:
        return SocketState(self.snd_nxt, self.snd_una, self.rcv_nxt, bytes(self.rbuf), bytes(self.wbuf))

    def load_state(self, st: SocketState) -> None:
        self.snd_nxt, self.snd_una, self.rcv_nxt = st.sent_seq, st.acked_seq, st.rcv_seq
        self.rbuf = bytearray(st.recv_queue)
        self.wbuf = bytearray(st.write_queue)

    # -- sending -----------------------------------------------------------
    def send(self, data: bytes) -> int:
        start = self.snd_nxt
        self.wbuf += data
        self.snd_nxt += len(data)
        self.transmit(Segment(self.stream, not self.is_server, "DATA", start, self.rcv_nxt, bytes(data)))
        if not self._armed:
            self._arm()
        return start

    def ack_now(self) -> None:
        self.transmit(Segment(self.stream, not self.is_server, "ACK", self.snd_nxt, self.rcv_nxt))

    def retransmit_now(self) -> None:
        if self.snd_una < self.snd_nxt:
            self.retransmits += 1
            self.transmit(Segment(self.stream, not self.is_server, "DATA", self.snd_una, self.rcv_nxt,
                                  bytes(self.wbuf)))
            self._arm()

    def _arm(self) -> None:
        self._gen += 1
        self._armed = True
        self.sim.after(self._rto_cur, self._on_timeout, self._gen, owner=self.owner)

    def _on_timeout(self, gen: int) -> None:
        if gen != self._gen:
            return
        self._armed = False
        if self.snd_una == self.snd_nxt:
            return
        self._rto_cur = min(self._rto_cur * 2, RTO_MAX)
        self.retransmit_now()

    def stop_timer(self) -> None:
        self._gen += 1
        self._armed = False

    # -- receiving -----------------------------------------------------------
    def available(self) -> int:
        return len(self.rbuf)

    def read(self, n: Optional[int] = None) -> bytes:
        if n is None or n >= len(self.rbuf):
            data = bytes(self.rbuf)
            self.rbuf.clear()
        else:
            data = bytes(self.rbuf[:n])
            del self.rbuf[:n]
        return data

    def on_segment(self, seg: Segment) -> None:
        if seg.ack > self.snd_una:
            ack = min(seg.ack, self.snd_nxt)
            del self.wbuf[:ack - self.snd_una]
            self.snd_una = ack
            self._rto_cur = self.rto
            if self.snd_una < self.snd_nxt:
                self._arm()
            else:
                self.stop_timer()
        if seg.kind == "DATA" and seg.data:
            if seg.seq <= self.rcv_nxt < seg.end:
                fresh = seg.data[self.rcv_nxt - seg.seq:]
                self.rbuf += fresh
                self.rcv_nxt += len(fresh)
                self.ack_now()
                if self.on_readable is not None:
                    self.on_readable(self)
            else:
                # duplicate or beyond a gap: re-advertise what we have
                self.ack_now()
