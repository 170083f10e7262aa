"""Small scripted programs and fakes shared by the runtime and checkpoint tests."""
from __future__ import annotations

import random

from hybridrep.checkpoint import build_cursor, capture, restore
from hybridrep.ndlog import EventLog, SeqCounter
from hybridrep.rr_runtime import Container, Costs, Phase
from hybridrep.sim import Sim


class Host:
    def __init__(self, name="h"):
        self.name = name
        self.alive = True


class Pipe:
    """Stand-in for a stream endpoint: an inbox and an outbox."""

    def __init__(self, inbox=b""):
        self.rbuf = bytearray(inbox)
        self.out = bytearray()

    def read(self, n=None):
        n = len(self.rbuf) if n is None else n
        data = bytes(self.rbuf[:n])
        del self.rbuf[:n]
        return data

    def send(self, data):
        start = len(self.out)
        self.out += data
        return start

    def state(self):
        from hybridrep.net import SocketState
        return SocketState(len(self.out), 0, 0, bytes(self.rbuf), bytes(self.out))


class Script:
    """Each thread runs a fixed list of ops; results land in st["res"].

    An op may be a callable taking (tid, st, mem) and returning an op, for
    steps that depend on shared memory.
    """

    def __init__(self, scripts, costs=None):
        self.scripts = scripts
        self.costs = costs or [[1000] * len(s) for s in scripts]

    def init(self, mem, n):
        mem.data["log"] = []
        return [{"i": 0, "res": []} for _ in range(n)]

    def step(self, tid, st, mem, result):
        if st["i"] > 0:
            st["res"].append(result)
        i = st["i"]
        if i >= len(self.scripts[tid]):
            return None, 0
        st["i"] = i + 1
        op = self.scripts[tid][i]
        if callable(op):
            op = op(tid, st, mem)
        return op, self.costs[tid][i]


def recorder(program, n, *, seed=0, costs=None, streams=None, jitter=0.2):
    sim = Sim(seed)
    c = Container(sim, Host("p"), program, n, phase=Phase.RECORD, costs=costs or Costs(app_jitter=jitter),
                  rng=random.Random(seed), kernel_rng=random.Random(seed + 1))
    log, pbsn = EventLog(), SeqCounter()
    c.attach_log(log, pbsn)
    for sid, p in (streams or {}).items():
        c.kernel.streams[sid] = p
    return sim, c, log, pbsn


def replay_from(ck, log, program, *, seed=0, mitigation="off", bbsn=10**9, costs=None, jitter=0.2,
                timeout=50_000_000):
    sim = Sim(seed)
    c = restore(ck, sim, Host("b"), program, costs=costs or Costs(app_jitter=jitter), rng=random.Random(seed),
                mitigation=mitigation, replay_timeout=timeout)
    cur = build_cursor(ck, log.lock_logs, log.syscall_logs, log.order_log, bbsn)
    return sim, c, cur


def results(c):
    return [t.st["res"] for t in c.threads]


__all__ = ["Host", "Pipe", "Script", "recorder", "replay_from", "results", "capture"]
