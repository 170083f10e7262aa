"""Verifying clients.

Every KV client thread owns one connection and a private key set, so the
expected version and value of each key are known exactly: a lost SET shows up
as a version one short, a SET applied twice as a version one ahead, and a
duplicated or stray response as a reply with no matching outstanding request.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any, Optional

from ..net import TcpEndpoint
from ..sim import SEC
from .batch import chunk_value, golden_digest


@dataclass
class ClientConfig:
    rate: float = 2000.0          # aggregate requests per second
    keys_per_thread: int = 16
    value_len: int = 8
    read_frac: float = 0.5


@dataclass
class VerifyResult:
    ok: bool
    ops: int = 0
    mismatches: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"ok": self.ok, "ops": self.ops, "mismatches": self.mismatches})


class KvClientThread:
    def __init__(self, host, sid: int, idx: int, cfg: ClientConfig, rng: random.Random, nthreads: int):
        self.host = host
        self.sim = host.sim
        self.sid = sid
        self.idx = idx
        self.cfg = cfg
        self.rng = rng
        self.ep = TcpEndpoint(host.sim, sid, False, host.transmit, owner=host)
        self.ep.on_readable = self._on_data
        self.keys = [f"c{idx}k{j}" for j in range(cfg.keys_per_thread)]
        self.think_mean = nthreads / cfg.rate
        self.rid = 0
        self.pending: Optional[tuple] = None     # (rid, line, t_sent)
        self.buf = ""
        self.txns: list[tuple[Optional[str], str]] = []
        self.lat: list[tuple[int, int]] = []
        self.stop_at = 0

    def start(self, stop_at: int) -> None:
        self.stop_at = stop_at
        self.sim.after(int(self.rng.expovariate(1 / self.think_mean) * SEC), self._issue, owner=self.host)

    def _issue(self) -> None:
        if self.sim.now >= self.stop_at or self.pending is not None:
            return
        self.rid += 1
        key = self.rng.choice(self.keys)
        if self.rng.random() < self.cfg.read_frac:
            line = f"GET {self.rid} {key}"
        else:
            val = "".join(self.rng.choices("abcdefghijklmnopqrstuvwxyz", k=self.cfg.value_len))
            line = f"SET {self.rid} {key} {val}"
        self.pending = (self.rid, line, self.sim.now)
        self.ep.send((line + "\n").encode())

    def _on_data(self, ep: TcpEndpoint) -> None:
        self.buf += ep.read().decode("latin-1")
        *lines, self.buf = self.buf.split("\n")
        for resp in lines:
            p = self.pending
            parts = resp.split(" ")
            if p is None or len(parts) < 2 or parts[1] != str(p[0]):
                self.txns.append((None, resp))
                continue
            self.txns.append((p[1], resp))
            self.lat.append((p[2], self.sim.now))
            self.pending = None
            self.sim.after(int(self.rng.expovariate(1 / self.think_mean) * SEC), self._issue, owner=self.host)

    @property
    def outstanding(self) -> bool:
        return self.pending is not None


def verify_run(client_logs: list[list[tuple[Optional[str], str]]]) -> VerifyResult:
    """Check each thread's request/response history against single-owner key semantics."""
    mismatches: list[Any] = []
    ops = 0
    for t, txns in enumerate(client_logs):
        shadow: dict[str, tuple[str, int]] = {}
        for req, resp in txns:
            if req is None:
                mismatches.append({"thread": t, "kind": "unsolicited", "resp": resp})
                continue
            ops += 1
            q = req.split(" ")
            r = resp.split(" ")
            if len(r) < 2 or r[1] != q[1]:
                mismatches.append({"thread": t, "kind": "rid", "req": req, "resp": resp})
                continue
            if q[0] == "SET":
                prev = shadow.get(q[2], (None, 0))[1]
                if r[0] != "OK" or len(r) != 4 or int(r[2]) != prev + 1:
                    kind = "lost" if r[0] == "OK" and int(r[2]) <= prev else "duplicate" if r[0] == "OK" else "bad"
                    mismatches.append({"thread": t, "kind": kind, "req": req, "resp": resp, "expected_version": prev + 1})
                    if r[0] == "OK" and len(r) == 4:
                        shadow[q[2]] = (q[3], int(r[2]))
                    continue
                shadow[q[2]] = (q[3], prev + 1)
            elif q[0] == "GET":
                cur = shadow.get(q[2])
                if cur is None:
                    good = r[0] == "NF" and len(r) == 3
                else:
                    good = r[0] == "VAL" and len(r) == 5 and int(r[2]) == cur[1] and r[3] == cur[0]
                if not good:
                    mismatches.append({"thread": t, "kind": "stale", "req": req, "resp": resp,
                                       "expected": None if cur is None else list(cur)})
            else:
                if r[0] != "ERR":
                    mismatches.append({"thread": t, "kind": "bad", "req": req, "resp": resp})
    return VerifyResult(not mismatches, ops, mismatches)


class BatchClient:
    """Collects the batch job's output lines from stream 0."""

    def __init__(self, host, sid: int = 0):
        self.host = host
        self.sim = host.sim
        self.sid = sid
        self.ep = TcpEndpoint(host.sim, sid, False, host.transmit, owner=host)
        self.ep.on_readable = self._on_data
        self.buf = ""
        self.lines: list[str] = []
        self.arrivals: list[int] = []
        self.done_at: Optional[int] = None

    def start(self, stop_at: int) -> None:
        pass

    def _on_data(self, ep: TcpEndpoint) -> None:
        self.buf += ep.read().decode("latin-1")
        *lines, self.buf = self.buf.split("\n")
        for ln in lines:
            self.lines.append(ln)
            self.arrivals.append(self.sim.now)
            if ln.startswith("digest "):
                self.done_at = self.sim.now

    @property
    def outstanding(self) -> bool:
        return self.done_at is None


def verify_batch(lines: list[str], seed: int, chunks: int) -> VerifyResult:
    mismatches = []
    seen: set[int] = set()
    digest_line = None
    for ln in lines:
        parts = ln.split(" ")
        if parts[0] == "chunk" and len(parts) == 3:
            i = int(parts[1])
            if i in seen:
                mismatches.append({"kind": "duplicate", "chunk": i})
            seen.add(i)
            if parts[2] != chunk_value(seed, i):
                mismatches.append({"kind": "value", "chunk": i})
        elif parts[0] == "digest":
            digest_line = parts[1]
        else:
            mismatches.append({"kind": "bad", "line": ln})
    missing = set(range(chunks)) - seen
    if missing:
        mismatches.append({"kind": "missing", "chunks": sorted(missing)[:10], "count": len(missing)})
    if digest_line != golden_digest(seed, chunks):
        mismatches.append({"kind": "digest", "got": digest_line})
    return VerifyResult(not mismatches, len(seen), mismatches)
