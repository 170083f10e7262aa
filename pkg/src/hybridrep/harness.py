"""Fault-injection campaigns: boot the pair, drive clients, kill a host, verify, report."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

from .checkpoint import EpochConfig
from .net import TraceWriter
from .replication import Cluster, ClusterConfig
from .rr_runtime import InternalFault, Mitigation
from .sim import MS, SEC, Perturbation
from .workloads import (BatchClient, BatchConfig, BatchJob, ClientConfig, KvClientThread, KvConfig, KvServer,
                        verify_batch, verify_run)

log = logging.getLogger(__name__)

DETECTION_TIMEOUT_MS = 90.0


class ConfigError(ValueError):
    pass


@dataclass
class CampaignConfig:
    benchmark: str = "kv"                 # kv | batch
    epoch_ms: float = 100.0
    mitigation: str = "off"               # off | order_only | order_plus_timing
    runs: int = 10
    kill: str = "primary"                 # primary | backup | none
    kill_window: float = 0.8
    perturbation: bool = False
    busy_ms: tuple = (20.0, 80.0)
    sleep_ms: tuple = (20.0, 120.0)
    seed: int = 1
    race_rate: float = 0.0                # racy writes per second, whole server
    run_ms: Optional[float] = None        # default: max(1000, 4 * epoch)
    drain_ms: float = 1200.0
    workers: int = 4
    client_threads: int = 8
    rate: float = 2000.0
    chunks: int = 200
    replicated: bool = True
    incremental: bool = False
    parallel: int = 1

    def __post_init__(self):
        if isinstance(self.busy_ms, list):
            self.busy_ms = tuple(self.busy_ms)
        if isinstance(self.sleep_ms, list):
            self.sleep_ms = tuple(self.sleep_ms)
        self.validate()

    def validate(self) -> None:
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if not 0 < self.kill_window < 1:
            raise ConfigError("kill_window must lie strictly between 0 and 1")
        if self.benchmark not in ("kv", "batch"):
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if self.kill not in ("primary", "backup", "none"):
            raise ConfigError(f"unknown kill target {self.kill!r}")
        try:
            Mitigation(self.mitigation)
        except ValueError:
            raise ConfigError(f"unknown mitigation {self.mitigation!r}") from None
        if self.epoch_ms <= 0:
            raise ConfigError("epoch_ms must be positive")
        if self.kill != "none" and not self.replicated:
            raise ConfigError("fault injection needs a replicated pair")

    @property
    def duration_ms(self) -> float:
        return self.run_ms if self.run_ms is not None else max(1000.0, 4 * self.epoch_ms)


@dataclass
class RunRecord:
    index: int
    seed: int
    kill_at_ms: Optional[float] = None
    recovered: Optional[bool] = None
    interruption_ms: Optional[float] = None
    recovery_latency_ms: Optional[float] = None
    detected_ms: Optional[float] = None
    restore_ms: float = 0.0
    read_log_ms: float = 0.0
    replay_ms: float = 0.0
    others_ms: float = 0.0
    ops: int = 0
    mismatches: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    reason: str = ""
    infra_fault: Optional[str] = None
    mean_latency_us: Optional[float] = None
    replay_entries: int = 0
    wall_s: float = 0.0


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, centre - half), min(1.0, centre + half))


@dataclass
class ExperimentReport:
    config: dict
    runs: list[RunRecord] = field(default_factory=list)

    @property
    def graded(self) -> list[RunRecord]:
        return [r for r in self.runs if r.infra_fault is None and r.recovered is not None]

    @property
    def recovery_rate(self) -> Optional[float]:
        g = self.graded
        return sum(r.recovered for r in g) / len(g) if g else None

    @property
    def ci(self) -> tuple[float, float]:
        g = self.graded
        return wilson_interval(sum(r.recovered for r in g), len(g))

    @property
    def infra_faults(self) -> int:
        return sum(r.infra_fault is not None for r in self.runs)

    @property
    def violations(self) -> int:
        return sum(len(r.violations) for r in self.runs)

    def summary(self) -> dict:
        g = self.graded
        lo, hi = self.ci

        def mean(attr):
            xs = [getattr(r, attr) for r in g if getattr(r, attr) is not None]
            return sum(xs) / len(xs) if xs else None
        return {"runs": len(self.runs), "graded": len(g), "recovered": sum(bool(r.recovered) for r in g),
                "recovery_rate": self.recovery_rate, "ci_low": lo, "ci_high": hi,
                "infra_faults": self.infra_faults, "violations": self.violations,
                "ops": sum(r.ops for r in self.runs),
                "mean_interruption_ms": mean("interruption_ms"), "mean_restore_ms": mean("restore_ms"),
                "mean_read_log_ms": mean("read_log_ms"), "mean_replay_ms": mean("replay_ms"),
                "mean_others_ms": mean("others_ms"), "mean_latency_us": mean("mean_latency_us")}


def run_seed(campaign_seed: int, index: int) -> int:
    """Per-run seed; identical across configurations so campaigns share kill points."""
    h = hashlib.blake2b(f"{campaign_seed}/{index}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big")


def cluster_config(cfg: CampaignConfig) -> ClusterConfig:
    return ClusterConfig(replicated=cfg.replicated,
                         epoch=EpochConfig(int(cfg.epoch_ms * MS), cfg.incremental),
                         mitigation=Mitigation(cfg.mitigation), cores=cfg.workers)


def run_one(cfg: CampaignConfig, index: int, *, trace_path: Optional[str] = None) -> RunRecord:
    seed = run_seed(cfg.seed, index)
    rec = RunRecord(index, seed)
    t0 = time.perf_counter()
    fh = open(trace_path, "w") if trace_path else None
    try:
        _run(cfg, rec, fh)
    except InternalFault as exc:
        rec.infra_fault = f"{type(exc).__name__}: {exc}"
    finally:
        if fh:
            fh.close()
    rec.wall_s = time.perf_counter() - t0
    return rec


def build_scenario(cfg: CampaignConfig, seed: int, trace_fh=None):
    """Booted cluster with its clients started; returns (cluster, clients, control rng)."""
    ctl = random.Random(seed)
    dur = int(cfg.duration_ms * MS)
    if cfg.benchmark == "kv":
        kcfg = KvConfig(workers=cfg.workers, conns_per_worker=max(1, cfg.client_threads // cfg.workers),
                        race_rate=cfg.race_rate)
        program, streams = KvServer(kcfg), kcfg.streams
    else:
        bcfg = BatchConfig(seed=cfg.seed, chunks=cfg.chunks, workers=cfg.workers)
        program, streams = BatchJob(bcfg), [0]
    perturb = None
    if cfg.perturbation:
        perturb = Perturbation(random.Random(ctl.getrandbits(64)), cfg.workers, dur + int(cfg.drain_ms * MS) + SEC,
                               cfg.busy_ms, cfg.sleep_ms)
    cl = Cluster(cluster_config(cfg), program, cfg.workers, streams, seed=ctl.getrandbits(64),
                 perturbation=perturb, trace=TraceWriter(trace_fh) if trace_fh else None)
    host = cl.client
    if cfg.benchmark == "kv":
        ccfg = ClientConfig(rate=cfg.rate)
        clients = [KvClientThread(host, sid, i, ccfg, random.Random(ctl.getrandbits(64)), len(streams))
                   for i, sid in enumerate(streams)]
    else:
        clients = [BatchClient(host, 0)]
    for c in clients:
        host.register(c.ep)
    cl.boot()
    for c in clients:
        c.start(dur)
    return cl, clients, ctl


def _run(cfg: CampaignConfig, rec: RunRecord, trace_fh) -> None:
    cl, clients, ctl = build_scenario(cfg, rec.seed, trace_fh)
    dur = int(cfg.duration_ms * MS)
    kill_at = None
    if cfg.kill != "none":
        lo = (1 - cfg.kill_window) / 2
        kill_at = int(dur * (lo + cfg.kill_window * ctl.random()))
        cl.kill(cfg.kill, kill_at)
        rec.kill_at_ms = kill_at / MS
    horizon = dur + int(cfg.drain_ms * MS)
    step = 50 * MS
    while cl.sim.now < horizon:
        cl.run(min(horizon, cl.sim.now + step))
        if cl.infra_fault:
            break
        if cl.sim.now >= dur and not any(c.outstanding for c in clients):
            break
        if cl.status == "failed" and cl.sim.now > (kill_at or 0) + 300 * MS:
            break
    _grade(cfg, cl, clients, rec, kill_at)


def _grade(cfg: CampaignConfig, cl: Cluster, clients, rec: RunRecord, kill_at: Optional[int]) -> None:
    fm = cl.failover
    rec.infra_fault = cl.infra_fault
    rec.violations = list(cl.observer.violations)
    rec.restore_ms, rec.read_log_ms = fm.restore_ms, fm.read_log_ms
    rec.replay_ms, rec.others_ms = fm.replay_ms, fm.others_ms
    rec.replay_entries = fm.replay_entries
    rec.reason = fm.reason
    if fm.detected_at is not None and kill_at is not None:
        rec.detected_ms = (fm.detected_at - kill_at) / MS
    stalled = any(c.outstanding for c in clients)
    if cfg.benchmark == "kv":
        v = verify_run([c.txns for c in clients])
        lat = [done - sent for c in clients for sent, done in c.lat]
        rec.mean_latency_us = sum(lat) / len(lat) / 1000 if lat else None
        if kill_at is not None:
            gaps = [done - max(sent, kill_at) for c in clients for sent, done in c.lat if done > kill_at]
            rec.interruption_ms = max(gaps) / MS if gaps else None
    else:
        v = verify_batch(clients[0].lines, cfg.seed, cfg.chunks)
        if kill_at is not None:
            arr = clients[0].arrivals
            gaps = [b - max(a, kill_at) for a, b in zip(arr, arr[1:]) if b > kill_at]
            rec.interruption_ms = max(gaps) / MS if gaps else None
    rec.ops = v.ops
    rec.mismatches = v.mismatches[:20]
    ok = v.ok and not stalled and not rec.violations
    if cfg.kill == "none":
        rec.recovered = ok if rec.infra_fault is None else None
        return
    if fm.killed_at is None:
        rec.infra_fault = rec.infra_fault or "kill never fired"
        return
    rec.recovered = bool(fm.recovered) and ok
    if not rec.recovered and not rec.reason:
        rec.reason = "stalled clients" if stalled else ("client mismatch" if not v.ok else "release violation")
    if rec.recovered and rec.interruption_ms is not None:
        rec.recovery_latency_ms = rec.interruption_ms - DETECTION_TIMEOUT_MS


def _run_index(args):
    cfg, i = args
    return run_one(cfg, i)


def run_campaign(cfg: CampaignConfig, progress=None) -> ExperimentReport:
    rep = ExperimentReport(asdict(cfg))
    jobs = [(cfg, i) for i in range(cfg.runs)]
    if cfg.parallel > 1:
        with ProcessPoolExecutor(cfg.parallel) as ex:
            for r in ex.map(_run_index, jobs):
                rep.runs.append(r)
                if progress:
                    progress(r)
    else:
        for j in jobs:
            r = _run_index(j)
            rep.runs.append(r)
            if progress:
                progress(r)
    return rep


# -- report files ----------------------------------------------------------

def report_emit(rep: ExperimentReport, outdir: str) -> dict[str, str]:
    """Write runs.json (config plus per-run records) and summary.csv; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    jp = os.path.join(outdir, "runs.json")
    cp = os.path.join(outdir, "summary.csv")
    with open(jp, "w") as f:
        json.dump({"config": rep.config, "runs": [asdict(r) for r in rep.runs]}, f, indent=1)
    s = rep.summary()
    with open(cp, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(s))
        w.writeheader()
        w.writerow(s)
    return {"json": jp, "csv": cp}


def load_report(path: str) -> ExperimentReport:
    with open(path) as f:
        d = json.load(f)
    names = {fl.name for fl in fields(RunRecord)}
    return ExperimentReport(d["config"], [RunRecord(**{k: v for k, v in r.items() if k in names}) for r in d["runs"]])


# -- config files ------------------------------------------------------------

def _coerce(name: str, raw: str) -> Any:
    f = {fl.name: fl for fl in fields(CampaignConfig)}[name]
    t = f.type
    raw = raw.strip()
    if "bool" in str(t):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if "tuple" in str(t):
        parts = raw.replace(",", " ").split()
        if len(parts) != 2:
            raise ConfigError(f"{name}: expected two numbers")
        return tuple(float(p) for p in parts)
    if "Optional[float]" in str(t) or "float" in str(t):
        return float(raw)
    if "int" in str(t):
        return int(raw)
    return raw


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys are CampaignConfig field names (dashes allowed)."""
    out = {}
    names = {fl.name for fl in fields(CampaignConfig)}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        k = k.strip().replace("-", "_")
        if k not in names:
            raise ConfigError(f"line {n}: unknown key {k!r}")
        try:
            out[k] = _coerce(k, v)
        except ValueError as exc:
            raise ConfigError(f"line {n}: bad value for {k}: {v.strip()!r}") from None
    return out


def load_config(path: str, **overrides) -> CampaignConfig:
    with open(path) as f:
        d = parse_config_text(f.read())
    d.update({k: v for k, v in overrides.items() if v is not None})
    return CampaignConfig(**d)
