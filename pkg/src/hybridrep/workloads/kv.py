"""Multi-threaded in-memory key-value server.

Request/response grammar (one line each, ASCII, ``\\n``-terminated)::

    SET <rid> <key> <value>   ->  OK <rid> <version> <gen>
    GET <rid> <key>           ->  VAL <rid> <version> <value> <gen>
                                  NF <rid> <gen>
    anything else             ->  ERR <rid|-> <message>

``version`` counts the SETs applied to the key.  ``gen`` is a shared statistics
counter; every response reads it without a lock.  With ``race_rate > 0`` the
workers also bump it without a lock, at exponentially distributed intervals
(``race_rate`` writes per second over the whole server), which is the data race
the replay mitigations have to tolerate.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

from ..ndlog import LockOp, SyscallKind
from ..rr_runtime import rr_lock, rr_syscall
from ..sim import SEC, US


@dataclass
class KvConfig:
    workers: int = 4
    conns_per_worker: int = 2
    shards: int = 8
    race_rate: float = 0.0
    step_cost: int = 5 * US

    @property
    def streams(self) -> list[int]:
        return list(range(self.workers * self.conns_per_worker))


def shard_of(key: str, shards: int) -> int:
    return zlib.crc32(key.encode()) % shards


class KvServer:
    def __init__(self, cfg: KvConfig):
        self.cfg = cfg

    def init(self, mem, nthreads: int) -> list[dict]:
        for i in range(self.cfg.shards):
            mem.data[f"shard/{i}"] = {}
        mem.data["stats_gen"] = 0
        cpw = self.cfg.conns_per_worker
        return [{"pc": "recv", "streams": list(range(w * cpw, (w + 1) * cpw)), "rot": 0,
                 "buf": {}, "q": [], "next_race": None, "now": 0}
                for w in range(nthreads)]

    def _per_worker_rate(self) -> float:
        return self.cfg.race_rate / self.cfg.workers

    def step(self, tid: int, st: dict, mem, result):
        cost = self.cfg.step_cost
        pc = st["pc"]
        if pc == "recv":
            st["pc"] = "got"
            return rr_syscall(SyscallKind.STREAM_RECV, {"streams": st["streams"], "start": st["rot"]}), cost
        if pc == "got":
            sid, data = result
            streams = st["streams"]
            st["rot"] = (streams.index(sid) + 1) % len(streams)
            key = str(sid)
            text = st["buf"].get(key, "") + data.decode("latin-1")
            *lines, rest = text.split("\n")
            st["buf"][key] = rest
            st["q"].extend([sid, ln] for ln in lines if ln)
            if not st["q"]:
                st["pc"] = "got"
                return rr_syscall(SyscallKind.STREAM_RECV, {"streams": streams, "start": st["rot"]}), cost
            st["pc"] = "clock"
            return rr_syscall(SyscallKind.CLOCK_READ), cost
        if pc == "clock":
            st["now"] = result
            if self.cfg.race_rate > 0 and (st["next_race"] is None or result >= st["next_race"]):
                st["pc"] = "rand"
                return rr_syscall(SyscallKind.RANDOM_READ, {"n": 8}), cost
            return self._begin(st, mem, cost)
        if pc == "rand":
            if st["next_race"] is not None:
                # unsynchronized read-modify-write of shared state
                mem.write("stats_gen", mem.read("stats_gen") + 1)
            u = (result + 0.5) / 2.0 ** 64
            st["next_race"] = st["now"] + int(-math.log(u) / self._per_worker_rate() * SEC)
            return self._begin(st, mem, cost)
        if pc == "locked":
            req = st["req"]
            shard = mem.modify(f"shard/{req['shard']}")
            if req["op"] == "SET":
                old = shard.get(req["key"])
                ver = 1 if old is None else old[1] + 1
                shard[req["key"]] = [req["value"], ver]
                st["resp"] = f"OK {req['rid']} {ver}"
            else:
                cur = shard.get(req["key"])
                st["resp"] = f"NF {req['rid']}" if cur is None else f"VAL {req['rid']} {cur[1]} {cur[0]}"
            st["pc"] = "unlocked"
            return rr_lock(f"shard/{req['shard']}", LockOp.RELEASE), cost
        if pc == "unlocked":
            gen = mem.read("stats_gen")
            return self._send(st, f"{st.pop('resp')} {gen}\n", cost)
        if pc == "sent":
            st["q"].pop(0)
            st.pop("req", None)
            if st["q"]:
                st["pc"] = "clock"
                return rr_syscall(SyscallKind.CLOCK_READ), cost
            st["pc"] = "got"
            return rr_syscall(SyscallKind.STREAM_RECV, {"streams": st["streams"], "start": st["rot"]}), cost
        raise AssertionError(f"bad pc {pc}")

    def _begin(self, st: dict, mem, cost: int):
        sid, line = st["q"][0]
        parts = line.split(" ")
        op = parts[0]
        if (op == "SET" and len(parts) == 4) or (op == "GET" and len(parts) == 3):
            req = {"op": op, "rid": parts[1], "key": parts[2], "sid": sid,
                   "shard": shard_of(parts[2], self.cfg.shards)}
            if op == "SET":
                req["value"] = parts[3]
            st["req"] = req
            st["pc"] = "locked"
            return rr_lock(f"shard/{req['shard']}", LockOp.ACQUIRE), cost
        rid = parts[1] if len(parts) > 1 else "-"
        return self._send(st, f"ERR {rid} malformed\n", cost)

    def _send(self, st: dict, line: str, cost: int):
        sid = st["q"][0][0]
        st["pc"] = "sent"
        return rr_syscall(SyscallKind.STREAM_SEND, {"stream": sid, "data": line.encode()}), cost


def kv_handle(store: dict, line: str, gen: int = 0) -> str:
    """Reference single-threaded semantics of one request (used by tests)."""
    parts = line.split(" ")
    if parts[0] == "SET" and len(parts) == 4:
        old = store.get(parts[2])
        ver = 1 if old is None else old[1] + 1
        store[parts[2]] = [parts[3], ver]
        return f"OK {parts[1]} {ver} {gen}"
    if parts[0] == "GET" and len(parts) == 3:
        cur = store.get(parts[2])
        return f"NF {parts[1]} {gen}" if cur is None else f"VAL {parts[1]} {cur[1]} {cur[0]} {gen}"
    return f"ERR {parts[1] if len(parts) > 1 else '-'} malformed"
