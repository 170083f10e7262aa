"""Record/replay interposition layer and the container that drives workload threads.

Workload threads are resumable state machines.  A program's ``step`` receives
the result of the thread's previous interposed operation and returns the next
operation plus the CPU time spent computing before issuing it::

    ["lock", lock_id, LockOp]          # see rr_lock()
    ["sys", SyscallKind, params]       # see rr_syscall()
    None                               # thread finished

Every operation passes through a before hook, the simulated kernel and an after
hook.  In the record phase the after hook appends to the event log; in the
replay phase the before hook takes the outcome from the log and enforces the
recorded per-lock and per-resource orders; in the live phase operations run
directly.

Positions a thread can be parked at (for checkpoints):

    ret     op completed, app step pending (``result`` holds its return value)
    issue   app step done, computing for ``remaining`` ns before the op
    kernel  inside the hook pair, op not yet executed (blocked or about to run)
    after   inside the hook pair, op executed, after hook not yet run
    done    thread exited
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from ._canon import digest
from .ndlog import (CONSUMABLE, EventLog, GlobalOrderEvent, LockEvent, LockOp,
                    ResourceClass, SeqCounter, SyscallEvent, SyscallKind)
from .sim import US, Sim

EBUSY = 16
EBADF = 9
PAGE = 4096
FD_BASE = 3
MAP_BASE = 0x10000


class Phase(str, Enum):
    RECORD = "record"
    REPLAY = "replay"
    LIVE = "live"


class Mitigation(str, Enum):
    OFF = "off"
    ORDER_ONLY = "order_only"
    ORDER_PLUS_TIMING = "order_plus_timing"


class ReplayDivergence(RuntimeError):
    """Replay cannot follow the log (mismatch, exhaustion or timeout)."""


class UnsupportedReplay(ReplayDivergence):
    """The log holds an operation this runtime refuses to replay (connection accept)."""


class InternalFault(RuntimeError):
    pass


def rr_lock(lock_id: str, op: LockOp = LockOp.ACQUIRE) -> list:
    return ["lock", lock_id, LockOp(op)]


def rr_syscall(kind: SyscallKind, params: Optional[dict] = None) -> list:
    return ["sys", SyscallKind(kind), params or {}]


RENDEZVOUS = {
    SyscallKind.RESOURCE_OPEN: ResourceClass.DESCRIPTOR_TABLE,
    SyscallKind.RESOURCE_CLOSE: ResourceClass.DESCRIPTOR_TABLE,
    SyscallKind.STREAM_ACCEPT: ResourceClass.DESCRIPTOR_TABLE,
    SyscallKind.MEMORY_MAP: ResourceClass.MEMORY_MAP,
}


@dataclass
class Costs:
    hook_sys: int = 1500
    hook_lock: int = 200
    hook_replay: int = 1000
    syscall: int = 2000
    wake: int = 2 * US
    app_jitter: float = 0.2


@dataclass(slots=True)
class ThreadCtx:
    thread_id: int
    core: int = 0
    in_rr: bool = False
    in_hook: bool = False
    syscall_skipped: bool = False
    pos: str = "ret"
    op: Optional[list] = None
    result: Any = None
    remaining: int = 0
    st: dict = field(default_factory=dict)
    # driver-only (not checkpointed)
    gen: int = 0
    due: int = 0
    parked: bool = False
    park_pending: bool = False
    waiting: Optional[tuple] = None
    retry: Optional[Callable] = None
    wait_id: int = 0
    redrive: bool = False
    rv: Optional[tuple] = None
    ev: Any = None

    def plain(self) -> dict:
        return {"tid": self.thread_id, "core": self.core, "in_rr": self.in_rr, "in_hook": self.in_hook,
                "skipped": self.syscall_skipped, "pos": self.pos, "op": _op_plain(self.op),
                "result": self.result, "remaining": self.remaining,
                "rv": None if self.rv is None else [int(self.rv[0]), self.rv[1]]}

    @classmethod
    def from_plain(cls, d: dict, st: dict) -> "ThreadCtx":
        op = d["op"]
        if op is not None:
            op = ["lock", op[1], LockOp(op[2])] if op[0] == "lock" else ["sys", SyscallKind(op[1]), op[2]]
        ctx = cls(d["tid"], d["core"], d["in_rr"], d["in_hook"], d["skipped"], d["pos"], op,
                  d["result"], d["remaining"], st)
        if d.get("rv") is not None:
            ctx.rv = (ResourceClass(d["rv"][0]), d["rv"][1])
        return ctx


def _op_plain(op):
    if op is None:
        return None
    return [op[0], op[1] if op[0] == "lock" else int(op[1]), int(op[2]) if op[0] == "lock" else op[2]]


class Shared:
    """Application shared memory.  ``audit`` (if set) sees every access."""
    __slots__ = ("data", "audit", "current")

    def __init__(self, data: Optional[dict] = None):
        self.data = data if data is not None else {}
        self.audit: Optional[Callable[[int, str, bool], None]] = None
        self.current = -1

    def read(self, key: str, default=None):
        if self.audit is not None:
            self.audit(self.current, key, False)
        return self.data.get(key, default)

    def write(self, key: str, value) -> None:
        if self.audit is not None:
            self.audit(self.current, key, True)
        self.data[key] = value

    def modify(self, key: str):
        """Return a mutable container for in-place update (counts as a write)."""
        if self.audit is not None:
            self.audit(self.current, key, True)
        return self.data[key]


class LockState:
    __slots__ = ("writer", "readers")

    def __init__(self, writer=None, readers=None):
        self.writer: Optional[int] = writer
        self.readers: list[int] = readers or []

    def free(self) -> bool:
        return self.writer is None and not self.readers


class Kernel:
    """The simulated OS surface of one container."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.locks: dict[str, LockState] = {}
        self.fds: dict[int, str] = {}
        self.maps: dict[int, list] = {}
        self.next_map = MAP_BASE
        self.rendezvous = {int(c): 0 for c in ResourceClass}
        self.streams: dict[int, Any] = {}
        self.saved_streams: dict[int, Any] = {}   # stream state of a restored kernel, pre-reconstruction
        self.accept_queue: list[int] = []
        self.now: Callable[[], int] = lambda: 0

    # -- locks -----------------------------------------------------------
    def lock_op(self, tid: int, lock_id: str, op: LockOp) -> Optional[int]:
        """Return code, or None if the caller must block."""
        lk = self.locks.get(lock_id)
        if lk is None:
            lk = self.locks[lock_id] = LockState()
        if op == LockOp.RELEASE:
            if lk.writer == tid:
                lk.writer = None
            elif tid in lk.readers:
                lk.readers.remove(tid)
            else:
                raise InternalFault(f"thread {tid} releases {lock_id} it does not hold")
            return 0
        if op == LockOp.READ_ACQUIRE:
            if lk.writer is None:
                lk.readers.append(tid)
                return 0
            return None
        if lk.free():
            lk.writer = tid
            return 0
        return EBUSY if op == LockOp.TRY_ACQUIRE else None

    # -- syscalls --------------------------------------------------------
    def syscall(self, kind: SyscallKind, p: dict):
        """Execute; returns (event_result, payload, rendezvous) or None to block."""
        if kind == SyscallKind.CLOCK_READ:
            t = self.now()
            return t, t.to_bytes(8, "big"), None
        if kind == SyscallKind.RANDOM_READ:
            v = self.rng.getrandbits(64)
            return v, v.to_bytes(8, "big"), None
        if kind == SyscallKind.STREAM_RECV:
            ids = p["streams"]
            n = len(ids)
            start = p.get("start", 0)
            for i in range(n):
                sid = ids[(start + i) % n]
                ep = self.streams.get(sid)
                if ep is not None and ep.rbuf:
                    data = ep.read(p.get("max"))
                    return sid, data, None
            return None
        if kind == SyscallKind.STREAM_SEND:
            sid = p["stream"]
            data = p["data"]
            ep = self.streams.get(sid)
            if ep is None:
                return [-EBADF, sid, 0], b"", None
            start = ep.send(data)
            return [len(data), sid, start + len(data)], b"", None
        cls = RENDEZVOUS[kind]
        if kind == SyscallKind.STREAM_ACCEPT:
            if not self.accept_queue:
                return None
            sid = self.accept_queue.pop(0)
            fd = self._alloc_fd(f"stream:{sid}")
            res = [fd, sid]
        elif kind == SyscallKind.RESOURCE_OPEN:
            res = self._alloc_fd(p["name"])
        elif kind == SyscallKind.RESOURCE_CLOSE:
            res = 0 if self.fds.pop(p["fd"], None) is not None else -EBADF
        else:  # MEMORY_MAP
            if p["fd"] not in self.fds:
                res = -EBADF
            else:
                res = self.next_map
                self.maps[res] = [p["fd"], p["size"]]
                self.next_map += -(-max(1, p["size"]) // PAGE) * PAGE
        seq = self.rendezvous[int(cls)]
        self.rendezvous[int(cls)] = seq + 1
        return res, b"", (cls, seq)

    def _alloc_fd(self, name: str) -> int:
        fd = FD_BASE
        while fd in self.fds:
            fd += 1
        self.fds[fd] = name
        return fd

    # -- state -----------------------------------------------------------
    def plain(self) -> dict:
        return {"locks": {k: [v.writer, list(v.readers)] for k, v in self.locks.items()},
                "fds": {str(k): v for k, v in self.fds.items()},
                "maps": {str(k): v for k, v in self.maps.items()},
                "next_map": self.next_map,
                "rv": {str(k): v for k, v in self.rendezvous.items()},
                "accept": list(self.accept_queue),
                "rng": _rng_plain(self.rng)}

    def load_plain(self, d: dict) -> None:
        self.locks = {k: LockState(w, list(r)) for k, (w, r) in d["locks"].items()}
        self.fds = {int(k): v for k, v in d["fds"].items()}
        self.maps = {int(k): list(v) for k, v in d["maps"].items()}
        self.next_map = d["next_map"]
        self.rendezvous = {int(k): v for k, v in d["rv"].items()}
        self.accept_queue = list(d["accept"])
        self.rng.setstate(_rng_load(d["rng"]))


def _rng_plain(rng: random.Random) -> list:
    v, internal, g = rng.getstate()
    return [v, list(internal), g]


def _rng_load(d: list) -> tuple:
    return (d[0], tuple(d[1]), d[2])


def app_result(kind: SyscallKind, result: Any, payload: bytes) -> Any:
    if kind == SyscallKind.STREAM_RECV:
        return [result, payload]
    if kind == SyscallKind.STREAM_SEND:
        return result[0]
    return result


class ReplayCursor:
    """Replay position over the logs received by the backup."""

    def __init__(self, lock_logs: dict, syscall_logs: dict, order_log: list,
                 pending_output_count: int, last_exit_stamp: int, bbsn: int):
        self.lock_logs = lock_logs
        self.syscall_logs = syscall_logs
        self.order_log = order_log
        self.lock_pos = {k: 0 for k in lock_logs}
        self.sys_pos = {k: 0 for k in syscall_logs}
        self.order_pos = 0
        self.pending_output_count = pending_output_count
        self.last_exit_stamp = last_exit_stamp
        self.last_exit_replay = 0
        self.bbsn = bbsn

    def peek_lock(self, lock_id) -> Optional[LockEvent]:
        lg = self.lock_logs.get(lock_id)
        i = self.lock_pos.get(lock_id, 0)
        return lg[i] if lg is not None and i < len(lg) else None

    def advance_lock(self, lock_id) -> None:
        self.lock_pos[lock_id] = self.lock_pos.get(lock_id, 0) + 1

    def peek_sys(self, tid) -> Optional[SyscallEvent]:
        lg = self.syscall_logs.get(tid)
        i = self.sys_pos.get(tid, 0)
        return lg[i] if lg is not None and i < len(lg) else None

    def advance_sys(self, tid) -> None:
        self.sys_pos[tid] = self.sys_pos.get(tid, 0) + 1

    def peek_order(self) -> Optional[GlobalOrderEvent]:
        i = self.order_pos
        return self.order_log[i] if i < len(self.order_log) else None

    def advance_order(self, now: int) -> None:
        e = self.order_log[self.order_pos]
        self.order_pos += 1
        self.last_exit_stamp = e.exit_stamp
        self.last_exit_replay = now

    def counts(self, e: SyscallEvent) -> bool:
        return e.output_seq is not None and e.output_seq <= self.bbsn


class RingBuffer:
    """Bounded queue of send notifications from workload threads to the logging thread."""

    def __init__(self, capacity: int = 1024):
        self.capacity = capacity
        self.items: list = []
        self.on_push: Optional[Callable[[], None]] = None
        self.dropped = 0

    def push(self, item) -> bool:
        if len(self.items) >= self.capacity:
            return False
        self.items.append(item)
        if self.on_push is not None:
            self.on_push()
        return True

    def drain(self) -> list:
        out, self.items = self.items, []
        return out

    def __len__(self) -> int:
        return len(self.items)


class Container:
    """A workload plus its runtime on one host."""

    def __init__(self, sim: Sim, host: Any, program: Any, nthreads: int = 0, *,
                 phase: Phase = Phase.RECORD, costs: Optional[Costs] = None, rng: Optional[random.Random] = None,
                 kernel_rng: Optional[random.Random] = None, mitigation: Mitigation = Mitigation.OFF,
                 perturbation=None, replay_timeout: int = 200_000_000, cores: int = 4):
        self.sim = sim
        self.host = host
        self.program = program
        self.costs = costs or Costs()
        self.rng = rng or random.Random(0)
        self.kernel = Kernel(kernel_rng or random.Random(1))
        self.kernel.now = lambda: sim.now
        self.phase = phase
        self.mitigation = Mitigation(mitigation)
        self.perturbation = perturbation
        self.replay_timeout = replay_timeout
        self.mem = Shared()
        self.threads: list[ThreadCtx] = []
        self.log: Optional[EventLog] = None
        self.pbsn: Optional[SeqCounter] = None
        self.ring: Optional[RingBuffer] = None
        self.cursor: Optional[ReplayCursor] = None
        self.on_output: Optional[Callable] = None   # (event, stream, end_seq) after a send is logged
        self.on_live: Optional[Callable] = None
        self.on_fail: Optional[Callable] = None
        self.on_done: Optional[Callable] = None
        self.external_streams: Optional[set] = None  # None: every stream is client-facing
        self.dead = False
        self.failure: Optional[BaseException] = None
        self.ops = 0
        self.pausing = False
        self._on_paused: Optional[Callable] = None
        self._waiters: dict[tuple, list[ThreadCtx]] = {}
        self._wait_seq = 0
        self.replay_sends: dict[int, bytearray] = {}
        self.replay_recv: dict[int, int] = {}
        self.replay_started = 0
        self.live_at: Optional[int] = None
        if nthreads:
            states = program.init(self.mem, nthreads)
            self.threads = [ThreadCtx(i, i % cores, st=states[i]) for i in range(nthreads)]

    @property
    def alive(self) -> bool:
        return not self.dead and self.host.alive

    def attach_log(self, log: EventLog, pbsn: SeqCounter, ring: Optional[RingBuffer] = None) -> None:
        self.log, self.pbsn, self.ring = log, pbsn, ring

    def kill(self) -> None:
        self.dead = True

    # -- scheduling helpers ------------------------------------------------
    def _sched(self, ctx: ThreadCtx, dt: int, fn: Callable) -> None:
        self.sim.after(dt, self._dispatch, ctx, ctx.gen, fn, owner=self)

    def _dispatch(self, ctx: ThreadCtx, gen: int, fn: Callable) -> None:
        if gen == ctx.gen and not ctx.parked:
            try:
                fn(ctx)
            except ReplayDivergence as exc:
                self._fail(exc)

    def _jitter(self, cost: int) -> int:
        j = self.costs.app_jitter
        return int(cost * (1 - j + 2 * j * self.rng.random())) if j else cost

    def _cpu(self, ctx: ThreadCtx, work: int) -> int:
        if self.perturbation is None:
            return work
        return self.perturbation.finish(ctx.core, self.sim.now, work) - self.sim.now

    def _fail(self, exc: BaseException) -> None:
        if self.dead:
            return
        self.failure = exc
        self.dead = True
        if self.on_fail is not None:
            self.on_fail(exc)
        else:
            raise exc

    # -- lifecycle ---------------------------------------------------------
    def start(self) -> None:
        for ctx in self.threads:
            self._resume(ctx)

    def _resume(self, ctx: ThreadCtx) -> None:
        pos = ctx.pos
        if pos == "ret":
            self._sched(ctx, 0, self._app)
        elif pos == "issue":
            ctx.due = self.sim.now + ctx.remaining
            self._sched(ctx, ctx.remaining, self._issue)
        elif pos == "kernel":
            self._sched(ctx, 0, self._kernel)
        elif pos == "after":
            self._sched(ctx, self.costs.syscall // 2, self._after)

    def _app(self, ctx: ThreadCtx) -> None:
        mem = self.mem
        mem.current = ctx.thread_id
        op, cost = self.program.step(ctx.thread_id, ctx.st, mem, ctx.result)
        mem.current = -1
        ctx.result = None
        if op is None:
            ctx.pos = "done"
            ctx.op = None
            if self.on_done is not None and all(c.pos == "done" for c in self.threads):
                self.on_done(self)
            if self.phase == Phase.REPLAY:
                self._check_stuck()
            return
        ctx.op = op
        ctx.pos = "issue"
        dur = self._cpu(ctx, self._jitter(cost))
        ctx.due = self.sim.now + dur
        self._sched(ctx, dur, self._issue)

    def _issue(self, ctx: ThreadCtx) -> None:
        # before hook
        ctx.pos = "kernel"
        ctx.in_rr = True
        ctx.in_hook = True
        ctx.syscall_skipped = False
        ctx.redrive = False
        if self.phase == Phase.REPLAY:
            self._sched(ctx, self.costs.hook_replay, self._replay_before)
        else:
            c = self.costs.hook_lock if ctx.op[0] == "lock" else self.costs.hook_sys
            self._sched(ctx, c, self._before_done)

    def _before_done(self, ctx: ThreadCtx) -> None:
        ctx.in_rr = False
        if self.pausing or ctx.park_pending:
            self._park(ctx)
            return
        self._kernel(ctx)

    # -- record / live path --------------------------------------------------
    def _kernel(self, ctx: ThreadCtx) -> None:
        if self.phase == Phase.REPLAY:
            self._replay_before(ctx)
            return
        op = ctx.op
        if op[0] == "lock":
            self._lock_exec(ctx)
        else:
            self._sched(ctx, self.costs.syscall // 2, self._exec)

    def _lock_exec(self, ctx: ThreadCtx) -> None:
        _, lock_id, kind = ctx.op
        rc = self.kernel.lock_op(ctx.thread_id, lock_id, kind)
        if rc is None:
            self._block(ctx, (("lock", lock_id),), self._lock_exec)
            return
        # the log append is atomic with the kernel operation: no pause point in between
        ctx.in_rr = True
        if self.phase == Phase.RECORD:
            log = self.log
            log.append_lock_event(LockEvent(lock_id, ctx.thread_id, kind, rc, log.next_turn(lock_id)),
                                  self.sim.now)
        if kind == LockOp.RELEASE:
            self._wake(("lock", lock_id))
        ctx.result = rc
        self._sched(ctx, self.costs.hook_lock, self._exit)

    def _exec(self, ctx: ThreadCtx) -> None:
        _, kind, params = ctx.op
        r = self.kernel.syscall(kind, params)
        if r is None:
            keys = (("accept",),) if kind == SyscallKind.STREAM_ACCEPT else \
                tuple(("stream", s) for s in params["streams"])
            self._block(ctx, keys, self._exec)
            return
        res, payload, rv = r
        ctx.result = [res, payload]
        ctx.rv = rv
        ctx.pos = "after"
        self._sched(ctx, self.costs.syscall - self.costs.syscall // 2, self._after)

    def _after(self, ctx: ThreadCtx) -> None:
        if self.phase == Phase.REPLAY:
            # restored between hooks: hand control back to the before hook
            ctx.redrive = True
            self._replay_before(ctx)
            return
        ctx.in_rr = True
        if self.phase == Phase.RECORD:
            self._sched(ctx, self.costs.hook_sys, self._record_append)
        else:
            res, payload = ctx.result
            ctx.result = app_result(ctx.op[1], res, payload)
            self._sched(ctx, self.costs.hook_sys, self._exit)

    def _record_append(self, ctx: ThreadCtx) -> None:
        if self.phase != Phase.RECORD:
            res, payload = ctx.result
            ctx.result = app_result(ctx.op[1], res, payload)
            self._exit(ctx)
            return
        _, kind, params = ctx.op
        res, payload = ctx.result
        external = kind == SyscallKind.STREAM_SEND and res[0] >= 0 and (
            self.external_streams is None or params["stream"] in self.external_streams)
        if external and self.ring is not None and len(self.ring) >= self.ring.capacity:
            self._block(ctx, (("ring",),), self._record_append)
            return
        log = self.log
        tid = ctx.thread_id
        now = self.sim.now
        # output_seq read once, immediately before the append
        oseq = self.pbsn.value + 1 if external else None
        ev = SyscallEvent(tid, log.next_call_seq(tid), kind, digest([int(kind), params]), res, payload,
                          ctx.rv, oseq, now)
        log.append_syscall_event(ev, None, now)
        log.append_order_event(GlobalOrderEvent(tid, log.next_order_index(), now), now)
        if external:
            if self.on_output is not None:
                self.on_output(ev, res[1], res[2])
            if self.ring is not None:
                self.ring.push(ev)
        ctx.result = app_result(kind, res, payload)
        self._exit(ctx)

    def _exit(self, ctx: ThreadCtx) -> None:
        ctx.in_rr = False
        ctx.in_hook = False
        ctx.pos = "ret"
        ctx.ev = None
        ctx.rv = None
        self.ops += 1
        if self.pausing or ctx.park_pending:
            self._park(ctx)
            return
        self._app(ctx)

    # -- blocking ------------------------------------------------------------
    def _block(self, ctx: ThreadCtx, keys: tuple, retry: Callable) -> None:
        ctx.waiting = keys
        ctx.retry = retry
        self._wait_seq += 1
        ctx.wait_id = self._wait_seq
        for k in keys:
            self._waiters.setdefault(k, []).append(ctx)
        if self.pausing and not ctx.in_rr:
            self._park(ctx)
        if self.phase == Phase.REPLAY:
            self.sim.after(self.replay_timeout, self._wait_timeout, ctx, ctx.wait_id, owner=self)
            self._check_stuck()

    def _unblock(self, ctx: ThreadCtx) -> None:
        for k in ctx.waiting:
            lst = self._waiters.get(k)
            if lst is not None and ctx in lst:
                lst.remove(ctx)
        ctx.waiting = None

    def _wake(self, key: tuple) -> None:
        lst = self._waiters.pop(key, None)
        if not lst:
            return
        for ctx in lst:
            if ctx.waiting is None:
                continue
            self._unblock(ctx)
            if ctx.parked:
                continue  # re-driven on resume
            self._sched(ctx, self.costs.wake, ctx.retry)

    def notify_stream(self, sid: int) -> None:
        self._wake(("stream", sid))

    def notify_accept(self) -> None:
        self._wake(("accept",))

    def ring_drained(self) -> None:
        self._wake(("ring",))

    def _wait_timeout(self, ctx: ThreadCtx, wait_id: int) -> None:
        if self.phase == Phase.REPLAY and ctx.waiting is not None and ctx.wait_id == wait_id:
            self._fail(ReplayDivergence(f"thread {ctx.thread_id} timed out waiting for {ctx.waiting}"))

    def _check_stuck(self) -> None:
        if self.phase != Phase.REPLAY or self.cursor is None or self.cursor.pending_output_count <= 0:
            return
        for c in self.threads:
            if c.pos != "done" and c.waiting is None:
                return
        self._fail(ReplayDivergence(
            f"log exhausted with {self.cursor.pending_output_count} outputs still to replay"))

    # -- pause coordination ----------------------------------------------------
    def request_pause(self, on_paused: Callable[[], None]) -> None:
        """Park every thread at a sanctioned point, then call on_paused()."""
        self.pausing = True
        self._on_paused = on_paused
        now = self.sim.now
        for ctx in self.threads:
            if ctx.pos == "done" or ctx.parked:
                continue
            if ctx.in_rr:
                ctx.park_pending = True   # parks at the hook boundary
                continue
            if ctx.pos == "issue":
                ctx.remaining = max(0, ctx.due - now)
            self._park(ctx, check=False)
        self._check_paused()

    def _park(self, ctx: ThreadCtx, check: bool = True) -> None:
        if ctx.in_rr:
            raise InternalFault(f"thread {ctx.thread_id} parked inside the RR library")
        ctx.gen += 1
        ctx.parked = True
        ctx.park_pending = False
        if check:
            self._check_paused()

    def all_parked(self) -> bool:
        return all(c.parked or c.pos == "done" for c in self.threads)

    def _check_paused(self) -> None:
        if self.pausing and self._on_paused is not None and self.all_parked():
            cb, self._on_paused = self._on_paused, None
            cb()

    def resume(self) -> None:
        self.pausing = False
        for ctx in self.threads:
            if not ctx.parked:
                continue
            ctx.parked = False
            if ctx.waiting is None:
                self._resume(ctx)

    # -- replay path -----------------------------------------------------------
    def begin_replay(self, cursor: ReplayCursor) -> None:
        """Start threads restored from a checkpoint in the replay phase."""
        self.cursor = cursor
        self.phase = Phase.REPLAY
        self.replay_started = self.sim.now
        cursor.last_exit_replay = self.sim.now
        if cursor.pending_output_count <= 0:
            self._go_live()
            self.start()
            return
        for ctx in self.threads:
            if ctx.pos in ("kernel", "after") and ctx.in_hook:
                # the restored kernel restarts the interrupted call; in replay with in_hook set
                # it only notes whether the call had run before the checkpoint
                ctx.syscall_skipped = ctx.pos == "kernel"
                ctx.redrive = True
                ctx.in_rr = True
                self._sched(ctx, 0, self._replay_before)
            else:
                self._resume(ctx)

    def _replay_before(self, ctx: ThreadCtx) -> None:
        if self.phase != Phase.REPLAY:
            ctx.in_rr = False
            ctx.redrive = False
            self._kernel(ctx)
            return
        cur = self.cursor
        op = ctx.op
        tid = ctx.thread_id
        if op[0] == "lock":
            _, lock_id, kind = op
            e = cur.peek_lock(lock_id)
            if e is None:
                self._block(ctx, (("live",),), self._replay_before)
                return
            if e.thread_id != tid:
                self._block(ctx, (("turn", lock_id),), self._replay_before)
                return
            if e.op_kind != kind:
                raise ReplayDivergence(f"lock {lock_id} turn {e.turn}: logged {e.op_kind.name}, "
                                       f"replayed {LockOp(kind).name}")
            if e.return_code == 0:
                rc = self.kernel.lock_op(tid, lock_id, kind)
                if rc != 0:
                    raise ReplayDivergence(f"lock {lock_id} turn {e.turn} not available in replay")
            cur.advance_lock(lock_id)
            ctx.result = e.return_code
            ctx.redrive = False
            self._wake(("turn", lock_id))
            self._sched(ctx, self.costs.hook_replay, self._exit)
            return
        _, kind, params = op
        e = cur.peek_sys(tid)
        if e is None:
            self._block(ctx, (("live",),), self._replay_before)
            return
        if e.kind != kind or e.params_digest != digest([int(kind), params]):
            raise ReplayDivergence(f"thread {tid} call {e.call_seq}: logged {e.kind.name} does not match "
                                   f"replayed {SyscallKind(kind).name} parameters")
        executed_before = ctx.redrive and not ctx.syscall_skipped
        if kind == SyscallKind.STREAM_ACCEPT:
            raise UnsupportedReplay("connection accept in the replayed interval")
        if kind in CONSUMABLE:
            if not executed_before:
                if kind == SyscallKind.STREAM_SEND and e.result[0] >= 0:
                    self.replay_sends.setdefault(params["stream"], bytearray()).extend(params["data"])
                elif kind == SyscallKind.STREAM_RECV:
                    self.replay_recv[e.result] = self.replay_recv.get(e.result, 0) + len(e.payload)
        elif not executed_before:
            if e.rendezvous is not None:
                cls, seq = e.rendezvous
                have = self.kernel.rendezvous[int(cls)]
                if have < seq:
                    self._block(ctx, (("rv", int(cls)),), self._replay_before)
                    return
                if have > seq:
                    raise ReplayDivergence(f"rendezvous {ResourceClass(cls).name} {seq} already passed")
            r = self.kernel.syscall(kind, params)
            if r is None or r[0] != e.result:
                raise ReplayDivergence(f"thread {tid} call {e.call_seq}: {SyscallKind(kind).name} "
                                       f"returned {None if r is None else r[0]!r}, logged {e.result!r}")
            if e.rendezvous is not None:
                self._wake(("rv", int(e.rendezvous[0])))
        cur.advance_sys(tid)
        ctx.redrive = False
        ctx.ev = e
        ctx.result = app_result(kind, e.result, e.payload)
        self._sched(ctx, self.costs.hook_replay, self._replay_after)

    def _replay_after(self, ctx: ThreadCtx) -> None:
        cur = self.cursor
        if self.phase == Phase.REPLAY and self.mitigation != Mitigation.OFF:
            o = cur.peek_order()
            if o is not None:
                if o.thread_id != ctx.thread_id:
                    self._block(ctx, (("order",),), self._replay_after)
                    return
                if self.mitigation == Mitigation.ORDER_PLUS_TIMING:
                    target = cur.last_exit_replay + max(0, o.exit_stamp - cur.last_exit_stamp)
                    if target > self.sim.now:
                        self._sched(ctx, target - self.sim.now, self._replay_exit)
                        return
        self._replay_exit(ctx)

    def _replay_exit(self, ctx: ThreadCtx) -> None:
        cur = self.cursor
        e = ctx.ev
        live_now = False
        if self.phase == Phase.REPLAY:
            o = cur.peek_order() if self.mitigation != Mitigation.OFF else None
            if o is not None and o.thread_id == ctx.thread_id:
                cur.advance_order(self.sim.now)
                self._wake(("order",))
            if cur.counts(e):
                cur.pending_output_count -= 1
                live_now = cur.pending_output_count == 0
        if live_now:
            self._go_live()
        self._exit(ctx)

    def _go_live(self) -> None:
        if self.phase == Phase.LIVE:
            return
        self.phase = Phase.LIVE
        self.live_at = self.sim.now
        if self.on_live is not None:
            self.on_live(self)
        for key in [k for k in self._waiters if k[0] in ("live", "turn", "rv", "order")]:
            self._wake(key)

    # -- inspection --------------------------------------------------------------
    def positions(self) -> list[tuple]:
        return [(c.thread_id, c.pos, c.in_rr, c.in_hook, c.syscall_skipped) for c in self.threads]
