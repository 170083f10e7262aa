"""Epoch checkpoints: cooperative pause, capture, wire format and restore.

Wire format (all integers little-endian)::

    u32 frame_length | "HRCK" | u8 version | u64 epoch_id | u64 pbsn | u8 flags
    [u64 base_epoch if flags & INCREMENTAL]
    u32 len | workload section   (canonical JSON)
    u32 len | runtime section    (canonical JSON)
    u32 len | streams section    (canonical JSON)

An incremental checkpoint's workload section holds only the top-level shared
memory keys whose value changed since ``base_epoch`` (plus deleted keys); the
backup materializes it against the checkpoint it already holds.
"""
from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ._canon import canon, uncanon
from .ndlog import EventLog, LockEvent, SyscallEvent, SyscallKind, count_pending_outputs
from .net import SocketState
from .rr_runtime import Container, Costs, Mitigation, Phase, ReplayCursor, Shared, ThreadCtx
from .sim import Sim

CKPT_MAGIC = b"HRCK"
CKPT_VERSION = 1
INCREMENTAL = 1

_HEAD = struct.Struct("<4sBQQB")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class CheckpointError(ValueError):
    """Missing, corrupt or inapplicable checkpoint."""


class PauseTimeout(RuntimeError):
    pass


@dataclass
class EpochConfig:
    epoch_len: int
    incremental: bool = False

    def __post_init__(self):
        if self.epoch_len <= 0:
            raise ValueError("epoch_len must be positive")


@dataclass
class Checkpoint:
    epoch_id: int
    workload_state: bytes
    runtime_state: bytes
    stream_state: dict[int, SocketState] = field(default_factory=dict)
    pbsn_snapshot: int = 0
    base_epoch: Optional[int] = None   # set for incremental (delta) checkpoints

    @property
    def incremental(self) -> bool:
        return self.base_epoch is not None

    def runtime(self) -> dict:
        return uncanon(self.runtime_state)

    def workload(self) -> dict:
        return uncanon(self.workload_state)

    def counters(self) -> dict:
        return self.runtime()["counters"]

    def size(self) -> int:
        return len(self.workload_state) + len(self.runtime_state) + 64 * (1 + len(self.stream_state)) + \
            sum(len(s.recv_queue) + len(s.write_queue) for s in self.stream_state.values())


@dataclass
class PauseToken:
    requested_at: int
    paused_at: int


def pause_all(container: Container, on_paused: Callable[[PauseToken], None],
              timeout: Optional[int] = None, on_timeout: Optional[Callable[[], None]] = None) -> None:
    """Park every workload thread at a sanctioned point, then call ``on_paused``.

    Threads computing or blocked in the kernel park at once (blocked ones keep
    ``in_hook``); threads inside hook code finish it first.
    """
    sim = container.sim
    t0 = sim.now
    done = [False]

    def fire():
        done[0] = True
        on_paused(PauseToken(t0, sim.now))

    if timeout is not None:
        def check():
            if not done[0]:
                if on_timeout is not None:
                    on_timeout()
                else:
                    raise PauseTimeout(f"pause did not complete within {timeout} ns")
        sim.after(timeout, check, owner=container)
    container.request_pause(fire)


class IncrementalBase:
    """Primary-side memory of the last capture, for delta checkpoints."""

    def __init__(self):
        self.epoch: Optional[int] = None
        self.encoded: dict[str, bytes] = {}


def _counters(log: Optional[EventLog]) -> dict:
    if log is None:
        return {"locks": {}, "calls": {}, "order": 0}
    return {"locks": {k: log.next_turn(k) for k in log.lock_logs},
            "calls": {str(k): log.next_call_seq(k) for k in log.syscall_logs},
            "order": log.next_order_index()}


def capture(container: Container, epoch_id: int, pbsn: int = 0, *, resume_at: Optional[int] = None,
            base: Optional[IncrementalBase] = None) -> Checkpoint:
    for c in container.threads:
        if c.in_rr:
            raise CheckpointError(f"thread {c.thread_id} is inside the RR library")
    threads_st = {str(c.thread_id): c.st for c in container.threads}
    mem = container.mem.data
    base_epoch = None
    if base is not None:
        enc = {k: canon(v) for k, v in mem.items()}
        if base.epoch is not None:
            changed = {k: mem[k] for k, b in enc.items() if base.encoded.get(k) != b}
            deleted = sorted(k for k in base.encoded if k not in enc)
            workload = {"delta": {"set": changed, "del": deleted}, "threads": threads_st}
            base_epoch = base.epoch
        else:
            workload = {"mem": mem, "threads": threads_st}
        base.epoch, base.encoded = epoch_id, enc
    else:
        workload = {"mem": mem, "threads": threads_st}
    k = container.kernel
    streams = dict(k.saved_streams)
    for sid, ep in k.streams.items():
        streams[sid] = ep.state()
    now = container.sim.now
    runtime = {"threads": [c.plain() for c in container.threads],
               "kernel": k.plain(),
               "phase": container.phase.value,
               "counters": _counters(container.log),
               "record_time": now if resume_at is None else resume_at}
    return Checkpoint(epoch_id, canon(workload), canon(runtime), streams, pbsn, base_epoch)


def materialize(delta: Checkpoint, prev: Optional[Checkpoint]) -> Checkpoint:
    """Turn an incremental checkpoint into a full one using the previous full checkpoint."""
    if not delta.incremental:
        return delta
    if prev is None or prev.epoch_id != delta.base_epoch:
        raise CheckpointError(f"incremental checkpoint {delta.epoch_id} needs base {delta.base_epoch}")
    w = delta.workload()
    mem = dict(prev.workload()["mem"])
    for key in w["delta"]["del"]:
        mem.pop(key, None)
    mem.update(w["delta"]["set"])
    return Checkpoint(delta.epoch_id, canon({"mem": mem, "threads": w["threads"]}), delta.runtime_state,
                      dict(delta.stream_state), delta.pbsn_snapshot, None)


def serialize(c: Checkpoint) -> bytes:
    flags = INCREMENTAL if c.incremental else 0
    out = [_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, c.epoch_id, c.pbsn_snapshot, flags)]
    if flags:
        out.append(_U64.pack(c.base_epoch))
    streams = canon({str(sid): s.to_plain() for sid, s in sorted(c.stream_state.items())})
    for sec in (c.workload_state, c.runtime_state, streams):
        out.append(_U32.pack(len(sec)))
        out.append(sec)
    body = b"".join(out)
    return _U32.pack(len(body)) + body


def deserialize(data: bytes) -> Checkpoint:
    try:
        if len(data) < 4 or _U32.unpack_from(data)[0] != len(data) - 4:
            raise CheckpointError("bad checkpoint frame length")
        magic, ver, epoch, pbsn, flags = _HEAD.unpack_from(data, 4)
        if magic != CKPT_MAGIC:
            raise CheckpointError("bad checkpoint magic")
        if ver != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {ver}")
        pos = 4 + _HEAD.size
        base = None
        if flags & INCREMENTAL:
            (base,) = _U64.unpack_from(data, pos)
            pos += 8
        secs = []
        for _ in range(3):
            (n,) = _U32.unpack_from(data, pos)
            pos += 4
            if pos + n > len(data):
                raise CheckpointError("truncated checkpoint section")
            secs.append(bytes(data[pos:pos + n]))
            pos += n
        if pos != len(data):
            raise CheckpointError("trailing bytes after checkpoint")
        streams = {int(k): SocketState.from_plain(v) for k, v in uncanon(secs[2]).items()}
        uncanon(secs[0]), uncanon(secs[1])  # validate
    except CheckpointError:
        raise
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    return Checkpoint(epoch, secs[0], secs[1], streams, pbsn, base)


def restore(c: Checkpoint, sim: Sim, host: Any, program: Any, *, costs: Optional[Costs] = None,
            rng: Optional[random.Random] = None, mitigation: Mitigation = Mitigation.OFF,
            replay_timeout: int = 200_000_000) -> Container:
    """Rebuild the container parked at its captured positions, in the replay phase.

    Threads are not started; call ``Container.begin_replay`` with a cursor.
    """
    if c is None:
        raise CheckpointError("no committed checkpoint")
    if c.incremental:
        raise CheckpointError("materialize incremental checkpoints before restoring")
    try:
        w = c.workload()
        rt = c.runtime()
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    cont = Container(sim, host, program, 0, phase=Phase.REPLAY, costs=costs, rng=rng,
                     mitigation=mitigation, replay_timeout=replay_timeout)
    cont.mem = Shared(w["mem"])
    cont.threads = [ThreadCtx.from_plain(d, w["threads"][str(d["tid"])]) for d in rt["threads"]]
    cont.kernel.load_plain(rt["kernel"])
    cont.kernel.saved_streams = dict(c.stream_state)
    return cont


def build_cursor(c: Checkpoint, lock_logs: dict, syscall_logs: dict, order_log: list, bbsn: int) -> ReplayCursor:
    """Replay cursor over the logs that follow checkpoint ``c``.

    The logs passed in may start before the checkpoint; entries below the
    checkpoint's counters are dropped here.
    """
    rt = c.runtime()
    ctr = rt["counters"]
    locks = {}
    for lid, evs in lock_logs.items():
        lo = ctr["locks"].get(lid, 0)
        locks[lid] = [e for e in evs if e.turn >= lo]
    calls = {}
    for tid, evs in syscall_logs.items():
        lo = ctr["calls"].get(str(tid), 0)
        calls[tid] = [e for e in evs if e.call_seq >= lo]
    order = [e for e in order_log if e.order_index >= ctr["order"]]
    pending = count_pending_outputs((e for evs in calls.values() for e in evs), bbsn)
    return ReplayCursor(locks, calls, order, pending, rt["record_time"], bbsn)


def has_accept(cursor: ReplayCursor) -> bool:
    return any(e.kind == SyscallKind.STREAM_ACCEPT for evs in cursor.syscall_logs.values() for e in evs)
