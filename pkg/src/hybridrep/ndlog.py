"""Nondeterministic event logs, batch collection and the PBSN/BBSN counting rule.

A primary keeps one log per lock, one log of syscalls per thread and one global
order log.  Workload threads append to these concurrently; a single logging
thread collects new entries from the logs that were modified since the previous
collection and ships them to the backup as a :class:`LogBatch`.

Collection visits the dirty logs one at a time while workload threads keep
appending.  The logging thread increments the primary counter (PBSN) before
gathering anything, and every external send records ``PBSN + 1``, the number
of the first batch collected after the send was logged.  A collection takes
only entries appended before it began (later ones wait for the next batch),
so everything a send depends on travels in the same or an earlier batch.  The
backup counts received batches (BBSN) and replays a send only if
``output_seq <= BBSN``.
"""
from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Iterable, Iterator, Optional

from ._canon import canon, uncanon

__all__ = [
    "LockOp", "SyscallKind", "ResourceClass", "LockEvent", "SyscallEvent",
    "GlobalOrderEvent", "OutgoingCopy", "EventLog", "LogBatch", "SeqCounter",
    "LogConsistencyError", "BatchDecodeError", "append_lock_event",
    "collect_batch", "count_pending_outputs", "serialize_batch",
    "deserialize_batch", "dump_text", "parse_text", "BATCH_VERSION",
]


class LockOp(IntEnum):
    ACQUIRE = 0
    TRY_ACQUIRE = 1
    RELEASE = 2
    READ_ACQUIRE = 3
    WRITE_ACQUIRE = 4


class SyscallKind(IntEnum):
    CLOCK_READ = 0
    RANDOM_READ = 1
    STREAM_RECV = 2
    STREAM_SEND = 3
    STREAM_ACCEPT = 4
    RESOURCE_OPEN = 5
    RESOURCE_CLOSE = 6
    MEMORY_MAP = 7


# replayed from the log without touching the (simulated) kernel
CONSUMABLE = frozenset({SyscallKind.CLOCK_READ, SyscallKind.RANDOM_READ,
                        SyscallKind.STREAM_RECV, SyscallKind.STREAM_SEND})


class ResourceClass(IntEnum):
    DESCRIPTOR_TABLE = 0
    MEMORY_MAP = 1


class LogConsistencyError(RuntimeError):
    """A log invariant was violated (gap or duplicate ordinal)."""


class BatchDecodeError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class LockEvent:
    lock_id: str
    thread_id: int
    op_kind: LockOp
    return_code: int
    turn: int


@dataclass(frozen=True, slots=True)
class SyscallEvent:
    thread_id: int
    call_seq: int
    kind: SyscallKind
    params_digest: bytes
    result: Any = None
    payload: bytes = b""
    rendezvous: Optional[tuple[int, int]] = None  # (ResourceClass, access_seq)
    output_seq: Optional[int] = None
    exit_stamp: int = 0


@dataclass(frozen=True, slots=True)
class GlobalOrderEvent:
    thread_id: int
    order_index: int
    exit_stamp: int


@dataclass(frozen=True, slots=True)
class OutgoingCopy:
    """Copy of an external send, kept so the backup can resend unacknowledged bytes."""
    thread_id: int
    call_seq: int
    stream_id: int
    start_seq: int
    data: bytes


@dataclass
class LogBatch:
    pbsn_at_collection: int
    lock_entries: dict[str, list[LockEvent]] = field(default_factory=dict)
    syscall_entries: dict[int, list[SyscallEvent]] = field(default_factory=dict)
    order_entries: list[GlobalOrderEvent] = field(default_factory=list)
    outgoing_copies: list[OutgoingCopy] = field(default_factory=list)

    def entries(self) -> Iterator[Any]:
        for evs in self.lock_entries.values():
            yield from evs
        for evs in self.syscall_entries.values():
            yield from evs
        yield from self.order_entries

    def __len__(self) -> int:
        return (sum(map(len, self.lock_entries.values()))
                + sum(map(len, self.syscall_entries.values()))
                + len(self.order_entries))


class SeqCounter:
    """Thread-safe monotonically increasing counter (PBSN / BBSN)."""

    def __init__(self, value: int = 0):
        self._value = value
        self._lock = threading.Lock()

    @property
    def value(self) -> int:
        return self._value

    def increment(self) -> int:
        with self._lock:
            self._value += 1
            return self._value

    def __repr__(self) -> str:
        return f"SeqCounter({self._value})"


ORDER_KEY = ("order", 0)


class _Log:
    __slots__ = ("base", "entries", "stamps", "extras", "order", "collected", "lock")

    def __init__(self, base: int = 0):
        self.base = base          # ordinal of entries[0]
        self.entries: list = []
        self.stamps: list[int] = []
        self.extras: list = []    # per-entry OutgoingCopy or None (syscall logs)
        self.order: list[int] = []  # global append number of each entry
        self.collected = 0        # index into entries of first uncollected entry
        self.lock = threading.Lock()


class EventLog:
    """Per-lock, per-thread and global-order logs plus the dirty set.

    One writer per log at a time, plus one collector.  Appends to different
    logs never contend; collection holds a log's lock only while slicing it.
    """

    def __init__(self, *, lock_bases: Optional[dict] = None, call_bases: Optional[dict] = None,
                 order_base: int = 0):
        self._logs: dict[tuple, _Log] = {}
        self._lock_bases = dict(lock_bases or {})
        self._call_bases = dict(call_bases or {})
        self._logs[ORDER_KEY] = _Log(order_base)
        self._dirty: dict[tuple, None] = {}
        self._meta = threading.Lock()
        self._appends = 0

    # -- views -----------------------------------------------------------
    @property
    def lock_logs(self) -> dict[str, list[LockEvent]]:
        return {k[1]: v.entries for k, v in self._logs.items() if k[0] == "lock"}

    @property
    def syscall_logs(self) -> dict[int, list[SyscallEvent]]:
        return {k[1]: v.entries for k, v in self._logs.items() if k[0] == "sys"}

    @property
    def order_log(self) -> list[GlobalOrderEvent]:
        return self._logs[ORDER_KEY].entries

    @property
    def dirty_set(self) -> set[tuple]:
        with self._meta:
            return set(self._dirty)

    def next_turn(self, lock_id: str) -> int:
        lg = self._logs.get(("lock", lock_id))
        return self._lock_bases.get(lock_id, 0) if lg is None else lg.base + len(lg.entries)

    def next_call_seq(self, thread_id: int) -> int:
        lg = self._logs.get(("sys", thread_id))
        return self._call_bases.get(thread_id, 0) if lg is None else lg.base + len(lg.entries)

    def next_order_index(self) -> int:
        lg = self._logs[ORDER_KEY]
        return lg.base + len(lg.entries)

    def _get(self, key: tuple, base: int) -> _Log:
        lg = self._logs.get(key)
        if lg is None:
            with self._meta:
                lg = self._logs.setdefault(key, _Log(base))
        return lg

    def _append(self, key: tuple, lg: _Log, ordinal: int, e, stamp: Optional[int], extra=None):
        with lg.lock:
            expect = lg.base + len(lg.entries)
            if ordinal != expect:
                raise LogConsistencyError(f"{key}: ordinal {ordinal}, expected {expect}")
            lg.entries.append(e)
            lg.stamps.append(time.monotonic_ns() if stamp is None else stamp)
            lg.extras.append(extra)
            with self._meta:
                self._appends += 1
                lg.order.append(self._appends)
                self._dirty[key] = None

    # -- appends ---------------------------------------------------------
    def append_lock_event(self, e: LockEvent, stamp: Optional[int] = None) -> None:
        if e.op_kind == LockOp.RELEASE and e.return_code != 0:
            raise LogConsistencyError("release must log return_code 0")
        key = ("lock", e.lock_id)
        lg = self._get(key, self._lock_bases.get(e.lock_id, 0))
        self._append(key, lg, e.turn, e, stamp)

    def append_syscall_event(self, e: SyscallEvent, copy: Optional[OutgoingCopy] = None,
                             stamp: Optional[int] = None) -> None:
        key = ("sys", e.thread_id)
        lg = self._get(key, self._call_bases.get(e.thread_id, 0))
        self._append(key, lg, e.call_seq, e, e.exit_stamp if stamp is None else stamp, copy)

    def append_order_event(self, e: GlobalOrderEvent, stamp: Optional[int] = None) -> None:
        self._append(ORDER_KEY, self._logs[ORDER_KEY], e.order_index, e,
                     e.exit_stamp if stamp is None else stamp)

    # -- collection ------------------------------------------------------
    def begin_collection(self, pbsn: SeqCounter) -> "Collection":
        # PBSN first: any send logged from here on carries a larger output_seq
        with self._meta:
            seq = pbsn.increment()
            keys = list(self._dirty)
            cutoff = self._appends
        return Collection(self, seq, keys, cutoff)

    def discard_collected_before(self, lock_turns: dict, call_seqs: dict, order_index: int) -> int:
        """Drop already-collected entries whose ordinal is below the given counters."""
        dropped = 0
        for key, lg in list(self._logs.items()):
            if key[0] == "lock":
                bound = lock_turns.get(key[1], 0)
            elif key[0] == "sys":
                bound = call_seqs.get(key[1], 0)
            else:
                bound = order_index
            with lg.lock:
                n = min(max(0, bound - lg.base), lg.collected)
                if n:
                    del lg.entries[:n], lg.stamps[:n], lg.extras[:n], lg.order[:n]
                    lg.base += n
                    lg.collected -= n
                    dropped += n
        return dropped

    def uncollected(self) -> int:
        return sum(len(lg.entries) - lg.collected for lg in self._logs.values())


class Collection:
    """One in-progress collection; logs are visited one at a time."""

    def __init__(self, log: EventLog, pbsn_at_collection: int, keys: list[tuple], cutoff: int = 0):
        self.log = log
        self.keys = keys
        self.cutoff = cutoff      # number of appends made before the collection began
        self.batch = LogBatch(pbsn_at_collection)

    def visit(self, key: tuple, until_stamp: Optional[int] = None, since_begin: bool = True) -> int:
        """Take the new entries of one log.

        Entries appended after the collection began are left for the next one
        unless ``since_begin`` is false; ``until_stamp`` further limits the cut
        by entry stamp.
        """
        log = self.log
        lg = log._logs.get(key)
        if lg is None:
            return 0
        with lg.lock:
            start = lg.collected
            stop = len(lg.entries)
            if since_begin:
                while stop > start and lg.order[stop - 1] > self.cutoff:
                    stop -= 1
            if until_stamp is not None:
                while stop > start and lg.stamps[stop - 1] > until_stamp:
                    stop -= 1
            new = lg.entries[start:stop]
            extras = lg.extras[start:stop]
            lg.collected = stop
            remaining = stop < len(lg.entries)
        with log._meta:
            if remaining:
                log._dirty[key] = None
            else:
                log._dirty.pop(key, None)
                # an append may have raced in after the slice
                if len(lg.entries) > lg.collected:
                    log._dirty[key] = None
        if new:
            b = self.batch
            if key[0] == "lock":
                b.lock_entries.setdefault(key[1], []).extend(new)
            elif key[0] == "sys":
                b.syscall_entries.setdefault(key[1], []).extend(new)
                b.outgoing_copies.extend(c for c in extras if c is not None)
            else:
                b.order_entries.extend(new)
        return len(new)

    def finish(self) -> LogBatch:
        return self.batch


def append_lock_event(log: EventLog, e: LockEvent) -> None:
    log.append_lock_event(e)


def collect_batch(log: EventLog, pbsn: SeqCounter) -> LogBatch:
    col = log.begin_collection(pbsn)
    for key in col.keys:
        col.visit(key)
    return col.finish()


def count_pending_outputs(items: Iterable, bbsn: int) -> int:
    """Number of external-output syscall events with ``output_seq <= bbsn``.

    ``items`` may mix LogBatch objects and bare SyscallEvents.
    """
    n = 0
    for it in items:
        evs = (e for lst in it.syscall_entries.values() for e in lst) if isinstance(it, LogBatch) else (it,)
        for e in evs:
            if isinstance(e, SyscallEvent) and e.output_seq is not None and e.output_seq <= bbsn:
                n += 1
    return n


# -- wire format ------------------------------------------------------------

BATCH_MAGIC = b"NDLB"
BATCH_VERSION = 1

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_LOCKEV = struct.Struct("<IBiQ")
_SYSHEAD = struct.Struct("<IQB")
_ORDEREV = struct.Struct("<IQq")
_COPYHEAD = struct.Struct("<IQIQ")
_RV = struct.Struct("<BQ")


def _blob(out: list, b: bytes) -> None:
    out.append(_U32.pack(len(b)))
    out.append(b)


def _str(out: list, s: str) -> None:
    b = s.encode()
    out.append(_U16.pack(len(b)))
    out.append(b)


def serialize_batch(b: LogBatch) -> bytes:
    out: list[bytes] = [BATCH_MAGIC, _U8.pack(BATCH_VERSION), _U64.pack(b.pbsn_at_collection)]
    out.append(_U32.pack(len(b.lock_entries)))
    for lock_id, evs in b.lock_entries.items():
        _str(out, lock_id)
        out.append(_U32.pack(len(evs)))
        for e in evs:
            out.append(_LOCKEV.pack(e.thread_id, int(e.op_kind), e.return_code, e.turn))
    out.append(_U32.pack(len(b.syscall_entries)))
    for tid, evs in b.syscall_entries.items():
        out.append(_U32.pack(tid))
        out.append(_U32.pack(len(evs)))
        for e in evs:
            out.append(_SYSHEAD.pack(e.thread_id, e.call_seq, int(e.kind)))
            _blob(out, e.params_digest)
            _blob(out, canon(e.result))
            _blob(out, e.payload)
            flags = (1 if e.rendezvous is not None else 0) | (2 if e.output_seq is not None else 0)
            out.append(_U8.pack(flags))
            if e.rendezvous is not None:
                out.append(_RV.pack(int(e.rendezvous[0]), e.rendezvous[1]))
            if e.output_seq is not None:
                out.append(_U64.pack(e.output_seq))
            out.append(_I64.pack(e.exit_stamp))
    out.append(_U32.pack(len(b.order_entries)))
    for e in b.order_entries:
        out.append(_ORDEREV.pack(e.thread_id, e.order_index, e.exit_stamp))
    out.append(_U32.pack(len(b.outgoing_copies)))
    for c in b.outgoing_copies:
        out.append(_COPYHEAD.pack(c.thread_id, c.call_seq, c.stream_id, c.start_seq))
        _blob(out, c.data)
    body = b"".join(out)
    return _U32.pack(len(body)) + body


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def take(self, st: struct.Struct) -> tuple:
        end = self.pos + st.size
        if end > len(self.buf):
            raise BatchDecodeError("truncated batch")
        v = st.unpack_from(self.buf, self.pos)
        self.pos = end
        return v

    def raw(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise BatchDecodeError("truncated batch")
        v = self.buf[self.pos:end]
        self.pos = end
        return bytes(v)

    def blob(self) -> bytes:
        return self.raw(self.take(_U32)[0])

    def str(self) -> str:
        try:
            return self.raw(self.take(_U16)[0]).decode()
        except UnicodeDecodeError as exc:
            raise BatchDecodeError(str(exc)) from None


def deserialize_batch(data: bytes) -> LogBatch:
    r = _Reader(memoryview(data))
    (length,) = r.take(_U32)
    if length != len(data) - 4:
        raise BatchDecodeError(f"frame length {length} does not match {len(data) - 4} bytes")
    if r.raw(4) != BATCH_MAGIC:
        raise BatchDecodeError("bad magic")
    (version,) = r.take(_U8)
    if version != BATCH_VERSION:
        raise BatchDecodeError(f"unsupported batch version {version}")
    try:
        b = LogBatch(r.take(_U64)[0])
        for _ in range(r.take(_U32)[0]):
            lock_id = r.str()
            evs = b.lock_entries.setdefault(lock_id, [])
            for _ in range(r.take(_U32)[0]):
                tid, op, rc, turn = r.take(_LOCKEV)
                evs.append(LockEvent(lock_id, tid, LockOp(op), rc, turn))
        for _ in range(r.take(_U32)[0]):
            (tid,) = r.take(_U32)
            evs = b.syscall_entries.setdefault(tid, [])
            for _ in range(r.take(_U32)[0]):
                etid, seq, kind = r.take(_SYSHEAD)
                dig = r.blob()
                result = uncanon(r.blob())
                payload = r.blob()
                (flags,) = r.take(_U8)
                rv = None
                if flags & 1:
                    cls, aseq = r.take(_RV)
                    rv = (ResourceClass(cls), aseq)
                oseq = r.take(_U64)[0] if flags & 2 else None
                (stamp,) = r.take(_I64)
                evs.append(SyscallEvent(etid, seq, SyscallKind(kind), dig, result, payload, rv, oseq, stamp))
        for _ in range(r.take(_U32)[0]):
            b.order_entries.append(GlobalOrderEvent(*r.take(_ORDEREV)))
        for _ in range(r.take(_U32)[0]):
            tid, seq, sid, start = r.take(_COPYHEAD)
            b.outgoing_copies.append(OutgoingCopy(tid, seq, sid, start, r.blob()))
    except (ValueError, KeyError) as exc:
        if isinstance(exc, BatchDecodeError):
            raise
        raise BatchDecodeError(str(exc)) from None
    if r.pos != len(data):
        raise BatchDecodeError("trailing bytes after batch")
    return b


# -- debug text dump ----------------------------------------------------------

def _tok(v: Any) -> str:
    return "-" if v is None else str(v)


def dump_text(b: LogBatch) -> str:
    """One event per line; parse_text() reads it back."""
    lines = [f"B pbsn={b.pbsn_at_collection}"]
    for lock_id, evs in b.lock_entries.items():
        for e in evs:
            lines.append(f"L lock={lock_id} tid={e.thread_id} op={e.op_kind.name.lower()} "
                         f"rc={e.return_code} turn={e.turn}")
    for evs in b.syscall_entries.values():
        for e in evs:
            rv = "-" if e.rendezvous is None else f"{int(e.rendezvous[0])}:{e.rendezvous[1]}"
            lines.append(f"S tid={e.thread_id} seq={e.call_seq} kind={e.kind.name.lower()} "
                         f"digest={e.params_digest.hex()} result={canon(e.result).hex()} "
                         f"payload={e.payload.hex()} rv={rv} out={_tok(e.output_seq)} stamp={e.exit_stamp}")
    for e in b.order_entries:
        lines.append(f"O tid={e.thread_id} idx={e.order_index} stamp={e.exit_stamp}")
    for c in b.outgoing_copies:
        lines.append(f"C tid={c.thread_id} seq={c.call_seq} stream={c.stream_id} "
                     f"start={c.start_seq} data={c.data.hex()}")
    return "\n".join(lines) + "\n"


def parse_text(text: str) -> LogBatch:
    b: Optional[LogBatch] = None
    for raw in text.splitlines():
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        tag, *rest = raw.split()
        f = dict(t.split("=", 1) for t in rest)
        if tag == "B":
            b = LogBatch(int(f["pbsn"]))
            continue
        if b is None:
            raise BatchDecodeError("dump must start with a B line")
        if tag == "L":
            e = LockEvent(f["lock"], int(f["tid"]), LockOp[f["op"].upper()], int(f["rc"]), int(f["turn"]))
            b.lock_entries.setdefault(e.lock_id, []).append(e)
        elif tag == "S":
            rv = None
            if f["rv"] != "-":
                c, s = f["rv"].split(":")
                rv = (ResourceClass(int(c)), int(s))
            e = SyscallEvent(int(f["tid"]), int(f["seq"]), SyscallKind[f["kind"].upper()],
                             bytes.fromhex(f["digest"]), uncanon(bytes.fromhex(f["result"])),
                             bytes.fromhex(f["payload"]), rv,
                             None if f["out"] == "-" else int(f["out"]), int(f["stamp"]))
            b.syscall_entries.setdefault(e.thread_id, []).append(e)
        elif tag == "O":
            b.order_entries.append(GlobalOrderEvent(int(f["tid"]), int(f["idx"]), int(f["stamp"])))
        elif tag == "C":
            b.outgoing_copies.append(OutgoingCopy(int(f["tid"]), int(f["seq"]), int(f["stream"]),
                                                  int(f["start"]), bytes.fromhex(f["data"])))
        else:
            raise BatchDecodeError(f"unknown line tag {tag!r}")
    if b is None:
        raise BatchDecodeError("empty dump")
    return b
