"""Deterministic multi-threaded batch job with a golden output digest.

Workers pull chunk indices from a shared queue, open and map a per-chunk
resource (descriptor and mapping numbers depend on interleaving, so replay has
to enforce the recorded order of those calls), compute a pure function of the
chunk, store it under a lock and report ``chunk <i> <value>`` on stream 0.  The
last worker to finish writes ``digest <hex>``, which must equal
:func:`golden_digest` no matter how the work was interleaved.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

from ..ndlog import LockOp, SyscallKind
from ..rr_runtime import rr_lock, rr_syscall
from ..sim import US

OUT_STREAM = 0


@dataclass
class BatchConfig:
    seed: int = 1
    chunks: int = 200
    workers: int = 4
    chunk_cost: int = 20_000 * US
    step_cost: int = 5 * US


def chunk_value(seed: int, i: int) -> str:
    h = f"{seed}/{i}".encode()
    for _ in range(16):
        h = hashlib.blake2b(h, digest_size=16).digest()
    return h[:6].hex()


def golden_digest(seed: int, chunks: int) -> str:
    h = hashlib.blake2b(digest_size=16)
    for i in range(chunks):
        h.update(f"{i}:{chunk_value(seed, i)}\n".encode())
    return h.hexdigest()


def results_digest(results: dict) -> str:
    h = hashlib.blake2b(digest_size=16)
    for i in sorted(results, key=int):
        h.update(f"{i}:{results[i]}\n".encode())
    return h.hexdigest()


class BatchJob:
    def __init__(self, cfg: BatchConfig):
        self.cfg = cfg

    def init(self, mem, nthreads: int) -> list[dict]:
        mem.data.update({"next": 0, "results": {}, "finished": 0})
        return [{"pc": "take"} for _ in range(nthreads)]

    def step(self, tid: int, st: dict, mem, result):
        cfg = self.cfg
        c = cfg.step_cost
        pc = st["pc"]
        if pc == "take":
            st["pc"] = "taken"
            return rr_lock("queue", LockOp.ACQUIRE), c
        if pc == "taken":
            i = mem.read("next")
            if i < cfg.chunks:
                mem.write("next", i + 1)
                st["i"] = i
            else:
                st["i"] = None
            st["pc"] = "untaken"
            return rr_lock("queue", LockOp.RELEASE), c
        if pc == "untaken":
            if st["i"] is None:
                st["pc"] = "fin_locked"
                return rr_lock("done", LockOp.ACQUIRE), c
            st["pc"] = "opened"
            return rr_syscall(SyscallKind.RESOURCE_OPEN, {"name": f"chunk-{st['i']}"}), c
        if pc == "opened":
            st["fd"] = result
            st["pc"] = "mapped"
            return rr_syscall(SyscallKind.MEMORY_MAP, {"fd": result, "size": 4096 * (1 + st["i"] % 4)}), c
        if pc == "mapped":
            st["addr"] = result
            st["value"] = chunk_value(cfg.seed, st["i"])
            st["pc"] = "stored_locked"
            return rr_lock("results", LockOp.ACQUIRE), cfg.chunk_cost
        if pc == "stored_locked":
            mem.modify("results")[str(st["i"])] = st["value"]
            st["pc"] = "stored"
            return rr_lock("results", LockOp.RELEASE), c
        if pc == "stored":
            st["pc"] = "closed"
            return rr_syscall(SyscallKind.RESOURCE_CLOSE, {"fd": st["fd"]}), c
        if pc == "closed":
            st["pc"] = "take"
            line = f"chunk {st['i']} {st['value']}\n".encode()
            return rr_syscall(SyscallKind.STREAM_SEND, {"stream": OUT_STREAM, "data": line}), c
        if pc == "fin_locked":
            n = mem.read("finished") + 1
            mem.write("finished", n)
            st["last"] = n == cfg.workers
            st["pc"] = "fin"
            return rr_lock("done", LockOp.RELEASE), c
        if pc == "fin":
            if not st["last"]:
                return None, 0
            # every worker is past the results lock by now; take it anyway so the audit stays clean
            st["pc"] = "digest_locked"
            return rr_lock("results", LockOp.ACQUIRE), c
        if pc == "digest_locked":
            st["digest"] = results_digest(mem.read("results"))
            st["pc"] = "digest_unlocked"
            return rr_lock("results", LockOp.RELEASE), c
        if pc == "digest_unlocked":
            st["pc"] = "exit"
            return rr_syscall(SyscallKind.STREAM_SEND,
                              {"stream": OUT_STREAM, "data": f"digest {st['digest']}\n".encode()}), c
        if pc == "exit":
            return None, 0
        raise AssertionError(f"bad pc {pc}")
