"""Backup-side network path: incoming-packet recording, the output gate, socket reconstruction."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .net import Segment, SocketState

log = logging.getLogger(__name__)

__all__ = ["ReleaseRequest", "GateState", "PackRecord", "SocketState", "ReconstructionError",
           "gate_submit", "gate_pump", "record_incoming", "reconstruct_sockets"]


class ReconstructionError(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class ReleaseRequest:
    stream: int
    release_seq: int


@dataclass
class GateState:
    release_seq: dict[int, int] = field(default_factory=dict)
    fifo: deque = field(default_factory=deque)
    buffered: dict[int, list[Segment]] = field(default_factory=dict)
    stopped: bool = False

    def add_stream(self, sid: int) -> None:
        self.release_seq.setdefault(sid, 0)
        self.buffered.setdefault(sid, [])

    def hold(self, seg: Segment) -> bool:
        """Offer an outgoing data segment; True if it may leave at once."""
        rel = self.release_seq.get(seg.stream)
        if rel is None:
            log.warning("outgoing segment for unknown stream %s", seg.stream)
            return False
        if self.stopped:
            return False
        if seg.end <= rel:
            return True
        self.buffered[seg.stream].append(seg)
        return False

    def held_bytes(self) -> int:
        return sum(len(s.data) for lst in self.buffered.values() for s in lst)

    def clear(self) -> None:
        self.fifo.clear()
        for lst in self.buffered.values():
            lst.clear()


def gate_submit(g: GateState, r: ReleaseRequest) -> None:
    g.fifo.append(r)


def gate_pump(g: GateState) -> list[Segment]:
    """Consume the request FIFO in order; return the segments now covered, in release order."""
    out: list[Segment] = []
    if g.stopped:
        return out
    fifo = g.fifo
    while fifo:
        r = fifo.popleft()
        cur = g.release_seq.get(r.stream)
        if cur is None:
            log.warning("release request for unknown stream %s ignored", r.stream)
            continue
        if r.release_seq <= cur:
            continue
        g.release_seq[r.stream] = r.release_seq
        buf = g.buffered[r.stream]
        if buf:
            keep = []
            for seg in buf:
                (out if seg.end <= r.release_seq else keep).append(seg)
            g.buffered[r.stream] = keep
    return out


class PackRecord:
    """Every byte the client sent, per stream, plus the acknowledgement numbers seen at the gate."""

    def __init__(self):
        self.contig: dict[int, bytearray] = {}
        self.ooo: dict[int, dict[int, bytes]] = {}
        self.client_acked: dict[int, int] = {}   # server bytes the client has acknowledged
        self.server_acked: dict[int, int] = {}   # client bytes the server has acknowledged

    def contiguous_end(self, sid: int) -> int:
        return len(self.contig.get(sid, b""))

    def bytes(self, sid: int, start: int, end: int) -> bytes:
        return bytes(self.contig.get(sid, b"")[start:end])

    def note_client_ack(self, sid: int, ack: int) -> None:
        if ack > self.client_acked.get(sid, 0):
            self.client_acked[sid] = ack

    def note_server_ack(self, sid: int, ack: int) -> None:
        if ack > self.server_acked.get(sid, 0):
            self.server_acked[sid] = ack


def record_incoming(p: PackRecord, stream: int, seq: int, data: bytes) -> None:
    if not data:
        return
    buf = p.contig.setdefault(stream, bytearray())
    end = len(buf)
    if seq > end:
        ooo = p.ooo.setdefault(stream, {})
        if len(data) > len(ooo.get(seq, b"")):
            ooo[seq] = bytes(data)
        return
    if seq + len(data) > end:
        buf += data[end - seq:]
    ooo = p.ooo.get(stream)
    while ooo:
        end = len(buf)
        progressed = False
        for s in sorted(ooo):
            if s > end:
                break
            d = ooo.pop(s)
            if s + len(d) > end:
                buf += d[end - s:]
                end = len(buf)
            progressed = True
        if not progressed:
            break


def reconstruct_sockets(ckpt_streams: dict[int, SocketState], replay_sends: dict[int, bytes],
                        replay_recv: dict[int, int], p: PackRecord) -> dict[int, SocketState]:
    """Socket state for the replay-to-live transition.

    Output side: checkpointed unacknowledged bytes plus everything the replay
    sent, trimmed by the client's acknowledgements.  Input side: the restored
    application has read the checkpointed position plus what it re-read from
    the log; every recorded byte from there on is queued for it.
    """
    out: dict[int, SocketState] = {}
    for sid, s in ckpt_streams.items():
        extra = bytes(replay_sends.get(sid, b""))
        sent = s.sent_seq + len(extra)
        allout = s.write_queue + extra
        acked = max(s.acked_seq, p.client_acked.get(sid, 0))
        if acked > sent:
            raise ReconstructionError(f"stream {sid}: client acknowledged {acked} > sent {sent}")
        wq = allout[acked - s.acked_seq:]
        read_pos = s.read_seq + replay_recv.get(sid, 0)
        end = p.contiguous_end(sid)
        if end < read_pos:
            raise ReconstructionError(f"stream {sid}: recorded input ends at {end}, application read {read_pos}")
        if end < p.server_acked.get(sid, 0):
            raise ReconstructionError(f"stream {sid}: acknowledged input beyond recorded bytes")
        st = SocketState(sent, acked, end, p.bytes(sid, read_pos, end), wq)
        st.check()
        out[sid] = st
    return out


def release_requests(events: Iterable) -> list[ReleaseRequest]:
    """Release requests for logged external sends (result = [n, stream, end_seq])."""
    return [ReleaseRequest(e.result[1], e.result[2]) for e in events]
