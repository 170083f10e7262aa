"""Virtual-time discrete-event kernel.

Time is an integer count of nanoseconds.  Every scheduled callback may name an
owner; callbacks owned by a host that has since been killed are dropped, which
is how fail-stop faults are modelled.
"""
from __future__ import annotations

import bisect
import heapq
import itertools
import random
from typing import Any, Callable, Optional

US = 1_000
MS = 1_000_000
SEC = 1_000_000_000


class Sim:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.now = 0
        self._q: list = []
        self._seq = itertools.count()
        self._stopped = False
        self.events = 0

    def at(self, t: int, fn: Callable, *args: Any, owner: Any = None) -> None:
        if t < self.now:
            t = self.now
        heapq.heappush(self._q, (t, next(self._seq), fn, args, owner))

    def after(self, dt: int, fn: Callable, *args: Any, owner: Any = None) -> None:
        heapq.heappush(self._q, (self.now + (dt if dt > 0 else 0), next(self._seq), fn, args, owner))

    def stop(self) -> None:
        self._stopped = True

    def run(self, until: Optional[int] = None) -> None:
        q = self._q
        pop = heapq.heappop
        self._stopped = False
        n = 0
        while q and not self._stopped:
            if until is not None and q[0][0] > until:
                self.now = until
                break
            t, _, fn, args, owner = pop(q)
            if owner is not None and not owner.alive:
                continue
            self.now = t
            n += 1
            fn(*args)
        else:
            if until is not None and not self._stopped and self.now < until:
                self.now = until
        self.events += n

    def pending(self) -> int:
        return len(self._q)

    def rng(self, name: str) -> random.Random:
        """Independent, reproducible stream derived from the master seed."""
        return random.Random(f"{self.seed}/{name}")


class Perturbation:
    """CPU competitor pinned to each core: busy for U(busy) ms, then sleeps U(sleep) ms.

    While it is busy, a workload thread on the same core gets half the CPU.
    """

    def __init__(self, rng: random.Random, cores: int, horizon: int,
                 busy_ms: tuple[float, float] = (20, 80), sleep_ms: tuple[float, float] = (20, 120)):
        self.cores = cores
        self._starts: list[list[int]] = []
        self._ends: list[list[int]] = []
        for _ in range(cores):
            t = int(rng.uniform(0, sleep_ms[1]) * MS)
            s, e = [], []
            while t < horizon:
                b = int(rng.uniform(*busy_ms) * MS)
                s.append(t)
                e.append(t + b)
                t += b + int(rng.uniform(*sleep_ms) * MS)
            self._starts.append(s)
            self._ends.append(e)

    def busy(self, core: int, t: int) -> bool:
        s = self._starts[core % self.cores]
        i = bisect.bisect_right(s, t) - 1
        return i >= 0 and t < self._ends[core % self.cores][i]

    def finish(self, core: int, start: int, work: int) -> int:
        """Wall (virtual) time at which `work` ns of CPU completes when started at `start`."""
        if work <= 0:
            return start
        s = self._starts[core % self.cores]
        e = self._ends[core % self.cores]
        i = bisect.bisect_right(s, start) - 1
        t = start
        while work > 0:
            if i >= 0 and t < e[i]:
                # inside a busy interval: half speed
                avail = (e[i] - t) // 2
                if work <= avail:
                    return t + 2 * work
                work -= avail
                t = e[i]
            nxt = s[i + 1] if i + 1 < len(s) else None
            if nxt is None or t + work <= nxt:
                return t + work
            work -= nxt - t
            t = nxt
            i += 1
        return t
