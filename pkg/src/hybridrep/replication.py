"""Primary/backup pair on the simulated network: epochs, log streaming, output gating, failover.

Client traffic goes to the service address, which the backup owns while the
pair is healthy.  The backup records every client segment and forwards it to
the primary; everything the primary sends comes back through the backup, where
data segments wait in the gate until the log batches covering them have
arrived.  Pure ACKs pass straight through.
"""
from __future__ import annotations

import heapq
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Optional

from .checkpoint import (Checkpoint, CheckpointError, EpochConfig, IncrementalBase, build_cursor, capture,
                         deserialize, has_accept, materialize, pause_all, restore, serialize)
from ._canon import canon
from .ndlog import EventLog, LogBatch, SeqCounter, deserialize_batch, serialize_batch
from .net import Network, Segment, TcpEndpoint
from .netgate import (GateState, PackRecord, ReconstructionError, ReleaseRequest, gate_pump, gate_submit,
                      reconstruct_sockets, record_incoming)
from .rr_runtime import (Container, Costs, Mitigation, Phase, ReplayDivergence, RingBuffer, UnsupportedReplay)
from .sim import MS, US, Perturbation, Sim

log = logging.getLogger(__name__)

SEG_OVERHEAD = 40


@dataclass
class HeartbeatConfig:
    interval: int = 30 * MS
    timeout: int = 90 * MS

    def __post_init__(self):
        if self.timeout < 2 * self.interval:
            raise ValueError("heartbeat timeout must be at least twice the interval")


@dataclass
class LinkSpec:
    latency: int
    jitter: int
    bandwidth_bps: float


@dataclass
class ClusterConfig:
    replicated: bool = True
    epoch: EpochConfig = field(default_factory=lambda: EpochConfig(100 * MS))
    mitigation: Mitigation = Mitigation.OFF
    heartbeat: HeartbeatConfig = field(default_factory=HeartbeatConfig)
    costs: Costs = field(default_factory=Costs)
    client_link: LinkSpec = field(default_factory=lambda: LinkSpec(60 * US, 5 * US, 1e9))
    pb_link: LinkSpec = field(default_factory=lambda: LinkSpec(15 * US, 2 * US, 10e9))
    log_quantum: int = 50 * US
    log_wake: int = 5 * US
    collect_per_log: int = 500
    collect_per_entry: int = 100
    ckpt_base: int = 500 * US
    ckpt_per_byte: float = 2.0
    restore_base: int = 2 * MS
    restore_per_byte: float = 5.0
    readlog_base: int = 200 * US
    readlog_per_entry: int = 500
    others_base: int = 500 * US
    others_per_stream: int = 50 * US
    ring_capacity: int = 1024
    cores: int = 4
    replay_timeout: Optional[int] = None

    @property
    def replay_wait_timeout(self) -> int:
        return self.replay_timeout if self.replay_timeout is not None else 2 * self.epoch.epoch_len


@dataclass
class FailoverMetrics:
    kind: str = ""
    killed_at: Optional[int] = None
    detected_at: Optional[int] = None
    restore_ms: float = 0.0
    read_log_ms: float = 0.0
    replay_ms: float = 0.0
    others_ms: float = 0.0
    live_at: Optional[int] = None
    service_at: Optional[int] = None
    recovered: Optional[bool] = None
    reason: str = ""
    pending_outputs: int = 0
    replay_entries: int = 0


class Observer:
    """Global view: checks every gate release against ground-truth send records."""

    def __init__(self):
        self.sends: dict[int, dict[int, tuple[int, int]]] = {}
        self.ok_upto: dict[int, int] = {}
        self.violations: list[str] = []
        self.releases = 0

    def on_send_logged(self, ev, sid: int, end: int) -> None:
        n = ev.result[0]
        self.sends.setdefault(sid, {})[end - n] = (end, ev.output_seq)

    def on_release(self, seg: Segment, bbsn: int) -> None:
        self.releases += 1
        sid = seg.stream
        pos = self.ok_upto.get(sid, 0)
        sends = self.sends.get(sid, {})
        while pos < seg.end:
            s = sends.get(pos)
            if s is None:
                self.violations.append(f"stream {sid}: bytes from {pos} released before their send was logged")
                return
            end, oseq = s
            if oseq > bbsn:
                self.violations.append(f"stream {sid}: bytes [{pos},{end}) released with output_seq {oseq} > BBSN {bbsn}")
                return
            pos = end
        self.ok_upto[sid] = pos

    def on_client_rx(self, src: str, status: str) -> None:
        if status == "replicated" and src != "backup":
            self.violations.append(f"client received a segment from {src} bypassing the gate")

    def on_prefix_mismatch(self, sid: int, pos: int) -> None:
        self.violations.append(f"stream {sid}: client received different bytes at offset {pos}")


class ClientHost:
    def __init__(self, cluster: "Cluster"):
        self.cluster = cluster
        self.sim = cluster.sim
        self.name = "client"
        self.alive = True
        self.endpoints: dict[int, TcpEndpoint] = {}
        self.hist: dict[int, bytearray] = {}
        self.prefix_mismatches = 0

    def transmit(self, seg: Segment) -> None:
        net = self.cluster.net
        net.send(self.name, net.service_host, seg, SEG_OVERHEAD + len(seg.data))

    def register(self, ep: TcpEndpoint) -> None:
        self.endpoints[ep.stream] = ep
        self.hist[ep.stream] = bytearray()

    def on_message(self, seg: Segment, src: str) -> None:
        self.cluster.observer.on_client_rx(src, self.cluster.status)
        if seg.data:
            h = self.hist[seg.stream]
            if seg.seq <= len(h):
                over = h[seg.seq:seg.end]
                if seg.data[:len(over)] != over:
                    self.prefix_mismatches += 1
                    self.cluster.observer.on_prefix_mismatch(seg.stream, seg.seq)
                if seg.end > len(h):
                    h += seg.data[len(h) - seg.seq:]
        ep = self.endpoints.get(seg.stream)
        if ep is not None:
            ep.on_segment(seg)


class PrimaryHost:
    def __init__(self, cluster: "Cluster"):
        self.cluster = cluster
        self.sim = cluster.sim
        self.cfg = cluster.cfg
        self.name = "primary"
        self.alive = True
        self.mode = "replicated" if self.cfg.replicated else "unreplicated"
        self.container: Optional[Container] = None
        self.log = EventLog()
        self.pbsn = SeqCounter()
        self.ring = RingBuffer(self.cfg.ring_capacity)
        self.ring.on_push = self._ring_kick
        self.log_busy = False
        self.epoch = 0
        self.ckpt_counters: dict[int, dict] = {}
        self.incr = IncrementalBase() if self.cfg.epoch.incremental else None
        self.last_hb = 0
        self.batches = 0
        self.checkpoints = 0
        self.pause_ns = 0

    def die(self) -> None:
        self.alive = False

    # -- boot --------------------------------------------------------------
    def boot(self, program, nthreads: int, streams: list[int]) -> None:
        sim = self.sim
        phase = Phase.RECORD if self.mode == "replicated" else Phase.LIVE
        c = Container(sim, self, program, nthreads, phase=phase, costs=self.cfg.costs,
                      rng=sim.rng("primary/sched"), kernel_rng=sim.rng("primary/kernel"),
                      mitigation=self.cfg.mitigation, perturbation=self.cluster.perturbation,
                      cores=self.cfg.cores)
        c.attach_log(self.log, self.pbsn, self.ring)
        c.on_output = self.cluster.observer.on_send_logged
        for sid in streams:
            ep = TcpEndpoint(sim, sid, True, self.transmit, owner=c)
            ep.on_readable = lambda e, c=c: c.notify_stream(e.stream)
            c.kernel.streams[sid] = ep
        self.container = c

    def start(self) -> None:
        self.container.start()
        if self.mode == "replicated":
            self.sim.after(self.cfg.epoch.epoch_len, self._epoch_tick, owner=self)
            self._hb_send()
            self.sim.after(self.cfg.heartbeat.timeout, self._hb_check, 0, owner=self)

    def initial_checkpoint(self) -> Checkpoint:
        ck = capture(self.container, 0, self.pbsn.value, base=self.incr)
        self.ckpt_counters[0] = ck.counters()
        return ck

    # -- network -----------------------------------------------------------
    def transmit(self, seg: Segment) -> None:
        dst = "backup" if self.mode == "replicated" else "client"
        self.cluster.net.send(self.name, dst, seg, SEG_OVERHEAD + len(seg.data))

    def on_message(self, msg, src: str) -> None:
        if isinstance(msg, Segment):
            ep = self.container.kernel.streams.get(msg.stream)
            if ep is not None:
                ep.on_segment(msg)
            return
        tag = msg[0]
        if tag == "hb":
            self.last_hb = self.sim.now
            self.sim.after(self.cfg.heartbeat.timeout, self._hb_check, self.sim.now, owner=self)
        elif tag == "ckpt_ack":
            ctr = self.ckpt_counters.pop(msg[1], None)
            if ctr is not None:
                self.log.discard_collected_before(ctr["locks"], {int(k): v for k, v in ctr["calls"].items()},
                                                  ctr["order"])

    # -- heartbeats --------------------------------------------------------
    def _hb_send(self) -> None:
        if self.mode != "replicated":
            return
        self.cluster.net.send(self.name, "backup", ("hb",), 16)
        self.sim.after(self.cfg.heartbeat.interval, self._hb_send, owner=self)

    def _hb_check(self, stamp: int) -> None:
        if self.mode == "replicated" and self.last_hb == stamp:
            self.failover_backup()

    def failover_backup(self) -> None:
        """The backup is gone: stop replicating, take the service address, serve directly."""
        cl = self.cluster
        self.mode = "direct"
        cl.status = "direct"
        cl.net.service_host = self.name
        fm = cl.failover
        fm.detected_at = self.sim.now
        c = self.container
        if c.phase == Phase.RECORD:
            c.phase = Phase.LIVE
        c.ring_drained()
        if c.pausing:
            c.resume()
        fm.live_at = self.sim.now
        fm.service_at = self.sim.now
        fm.recovered = True

    # -- epochs ------------------------------------------------------------
    def _epoch_tick(self) -> None:
        if self.mode != "replicated":
            return
        self.epoch += 1
        self._tick_at = self.sim.now
        pause_all(self.container, self._paused, timeout=5 * self.cfg.epoch.epoch_len,
                  on_timeout=self._pause_fault)

    def _pause_fault(self) -> None:
        self.cluster.infra_fault = f"epoch {self.epoch}: pause did not complete"
        self.sim.stop()

    def _paused(self, tok) -> None:
        cfg = self.cfg
        ck = capture(self.container, self.epoch, self.pbsn.value, base=self.incr)
        cost = cfg.ckpt_base + int(cfg.ckpt_per_byte * ck.size())
        rt = ck.runtime()
        rt["record_time"] = self.sim.now + cost
        ck.runtime_state = canon(rt)
        self.ckpt_counters[self.epoch] = rt["counters"]
        blob = serialize(ck)
        self.pause_ns += self.sim.now + cost - tok.requested_at
        self.sim.after(cost, self._ckpt_done, self.epoch, blob, owner=self)

    def _ckpt_done(self, epoch: int, blob: bytes) -> None:
        self.container.resume()
        if self.mode != "replicated":
            return
        self.checkpoints += 1
        self.cluster.net.send(self.name, "backup", ("ckpt", epoch, blob), len(blob))
        nxt = self._tick_at + self.cfg.epoch.epoch_len
        self.sim.at(max(nxt, self.sim.now), self._epoch_tick, owner=self)

    # -- logging thread ------------------------------------------------------
    def _ring_kick(self) -> None:
        if not self.log_busy and self.mode == "replicated":
            self.log_busy = True
            self.sim.after(self.cfg.log_wake, self._log_iter, owner=self)

    def _log_iter(self) -> None:
        if self.mode != "replicated" or not len(self.ring):
            self.log_busy = False
            return
        self.ring.drain()
        self.container.ring_drained()
        col = self.log.begin_collection(self.pbsn)
        self._visit(col, 0)

    def _visit(self, col, i: int) -> None:
        if self.mode != "replicated":
            self.log_busy = False
            return
        cfg = self.cfg
        if i < len(col.keys):
            n = col.visit(col.keys[i])
            self.sim.after(cfg.collect_per_log + cfg.collect_per_entry * n, self._visit, col, i + 1, owner=self)
            return
        blob = serialize_batch(col.finish())
        self.batches += 1
        self.cluster.net.send(self.name, "backup", ("batch", blob), len(blob))
        self.sim.after(cfg.log_quantum, self._log_iter, owner=self)


class LogStore:
    """Backup-side copy of the primary's logs since the last committed checkpoint."""

    def __init__(self):
        self.locks: dict[str, list] = {}
        self.calls: dict[int, list] = {}
        self.order: list = []

    def add(self, b: LogBatch) -> None:
        for lid, evs in b.lock_entries.items():
            self.locks.setdefault(lid, []).extend(evs)
        for tid, evs in b.syscall_entries.items():
            self.calls.setdefault(tid, []).extend(evs)
        self.order.extend(b.order_entries)

    def prune(self, ctr: dict) -> None:
        for lid, evs in self.locks.items():
            lo = ctr["locks"].get(lid, 0)
            self.locks[lid] = [e for e in evs if e.turn >= lo]
        for tid, evs in self.calls.items():
            lo = ctr["calls"].get(str(tid), 0)
            self.calls[tid] = [e for e in evs if e.call_seq >= lo]
        self.order = [e for e in self.order if e.order_index >= ctr["order"]]

    def __len__(self) -> int:
        return sum(map(len, self.locks.values())) + sum(map(len, self.calls.values())) + len(self.order)


class BackupHost:
    def __init__(self, cluster: "Cluster"):
        self.cluster = cluster
        self.sim = cluster.sim
        self.cfg = cluster.cfg
        self.name = "backup"
        self.alive = True
        self.mode = "replicated"
        self.packrec = PackRecord()
        self.gate = GateState()
        self.bbsn = SeqCounter()
        self.store = LogStore()
        self.pending: list[tuple] = []
        self.committed_sends: dict[int, dict[int, int]] = {}
        self.frontier: dict[int, int] = {}
        self.committed: Optional[Checkpoint] = None
        self.container: Optional[Container] = None
        self.last_hb = 0
        self.net_ready_at: Optional[int] = None
        self.program = None

    def die(self) -> None:
        self.alive = False

    def start(self, streams: list[int]) -> None:
        for sid in streams:
            self.gate.add_stream(sid)
            self.frontier[sid] = 0
        if self.cfg.replicated:
            self._hb_send()
            self.sim.after(self.cfg.heartbeat.timeout, self._hb_check, 0, owner=self)

    # -- network -----------------------------------------------------------
    def on_message(self, msg, src: str) -> None:
        if isinstance(msg, Segment):
            if src == "client":
                self._from_client(msg)
            elif src == "primary":
                self._from_primary(msg)
            return
        tag = msg[0]
        if tag == "batch":
            self.on_batch(msg[1])
        elif tag == "ckpt":
            self._on_ckpt(msg[1], msg[2])
        elif tag == "hb":
            self.last_hb = self.sim.now
            self.sim.after(self.cfg.heartbeat.timeout, self._hb_check, self.sim.now, owner=self)

    def _from_client(self, seg: Segment) -> None:
        sid = seg.stream
        if seg.data:
            record_incoming(self.packrec, sid, seg.seq, seg.data)
        self.packrec.note_client_ack(sid, seg.ack)
        if self.mode == "replicated":
            self.cluster.net.send(self.name, "primary", seg, SEG_OVERHEAD + len(seg.data))
        elif self.mode == "live":
            ep = self.container.kernel.streams.get(sid)
            if ep is not None:
                ep.on_segment(seg)

    def _from_primary(self, seg: Segment) -> None:
        if self.mode != "replicated":
            return
        self.packrec.note_server_ack(seg.stream, seg.ack)
        if seg.kind == "DATA" and seg.data:
            if self.gate.hold(seg):
                self._release(seg)
        else:
            self.cluster.net.send(self.name, "client", seg, SEG_OVERHEAD)

    def _release(self, seg: Segment) -> None:
        self.cluster.observer.on_release(seg, self.bbsn.value)
        self.cluster.net.send(self.name, "client", seg, SEG_OVERHEAD + len(seg.data))

    # -- log batches -------------------------------------------------------
    def on_batch(self, blob: bytes) -> None:
        if self.mode != "replicated":
            return  # failover already under way
        b = deserialize_batch(blob)
        n = self.bbsn.increment()
        if b.pbsn_at_collection != n:
            self.cluster.infra_fault = f"batch {b.pbsn_at_collection} arrived as number {n}"
            self.sim.stop()
            return
        self.store.add(b)
        for evs in b.syscall_entries.values():
            for e in evs:
                if e.output_seq is not None:
                    heapq.heappush(self.pending, (e.output_seq, e.exit_stamp, e.thread_id, e.call_seq, e.result))
        ready = []
        while self.pending and self.pending[0][0] <= n:
            ready.append(heapq.heappop(self.pending))
        ready.sort(key=lambda r: (r[1], r[2], r[3]))
        for _, _, _, _, res in ready:
            nbytes, sid, end = res
            sends = self.committed_sends.setdefault(sid, {})
            sends[end - nbytes] = end
            f = self.frontier.get(sid, 0)
            while f in sends:
                f = sends.pop(f)
            if f > self.frontier.get(sid, 0):
                self.frontier[sid] = f
                gate_submit(self.gate, ReleaseRequest(sid, f))
        for seg in gate_pump(self.gate):
            self._release(seg)

    def _on_ckpt(self, epoch: int, blob: bytes) -> None:
        if self.mode != "replicated":
            return
        try:
            ck = materialize(deserialize(blob), self.committed)
        except CheckpointError as exc:
            self.cluster.infra_fault = f"checkpoint {epoch}: {exc}"
            return
        self.committed = ck
        self.store.prune(ck.counters())
        self.cluster.net.send(self.name, "primary", ("ckpt_ack", epoch), 16)

    # -- heartbeats --------------------------------------------------------
    def _hb_send(self) -> None:
        if self.mode != "replicated":
            return
        self.cluster.net.send(self.name, "primary", ("hb",), 16)
        self.sim.after(self.cfg.heartbeat.interval, self._hb_send, owner=self)

    def _hb_check(self, stamp: int) -> None:
        if self.mode == "replicated" and self.last_hb == stamp:
            self.failover_primary()

    # -- primary failover ----------------------------------------------------
    def failover_primary(self) -> None:
        """Stop the gate, restore the committed checkpoint, replay, go live."""
        cl = self.cluster
        self.mode = "failover"
        cl.status = "failover"
        fm = cl.failover
        fm.detected_at = self.sim.now
        self.gate.stopped = True
        self.gate.clear()
        if self.committed is None:
            self._recovery_failed(CheckpointError("no committed checkpoint"))
            return
        cost = self.cfg.restore_base + int(self.cfg.restore_per_byte * self.committed.size())
        fm.restore_ms = cost / MS
        self.sim.after(cost, self._fo_restore, owner=self)

    def _fo_restore(self) -> None:
        cfg = self.cfg
        cl = self.cluster
        try:
            c = restore(self.committed, self.sim, self, cl.program, costs=cfg.costs,
                        rng=self.sim.rng("backup/sched"), mitigation=cfg.mitigation,
                        replay_timeout=cfg.replay_wait_timeout)
        except CheckpointError as exc:
            self._recovery_failed(exc)
            return
        self.container = c
        cursor = build_cursor(self.committed, self.store.locks, self.store.calls, self.store.order,
                              self.bbsn.value)
        n = sum(map(len, cursor.lock_logs.values())) + sum(map(len, cursor.syscall_logs.values())) + \
            len(cursor.order_log)
        cl.failover.replay_entries = n
        cl.failover.pending_outputs = cursor.pending_output_count
        cost = cfg.readlog_base + cfg.readlog_per_entry * n
        cl.failover.read_log_ms = cost / MS
        self.sim.after(cost, self._fo_replay, c, cursor, owner=self)

    def _fo_replay(self, c: Container, cursor) -> None:
        if has_accept(cursor):
            self._recovery_failed(UnsupportedReplay("connection accept in the replayed interval"))
            return
        c.on_live = self._on_live
        c.on_fail = self._recovery_failed
        self._replay_start = self.sim.now
        c.begin_replay(cursor)

    def _on_live(self, c: Container) -> None:
        cfg = self.cfg
        fm = self.cluster.failover
        fm.replay_ms = (self.sim.now - self._replay_start) / MS
        fm.live_at = self.sim.now
        try:
            states = reconstruct_sockets(c.kernel.saved_streams, c.replay_sends, c.replay_recv, self.packrec)
        except ReconstructionError as exc:
            self._recovery_failed(exc)
            return
        for sid, st in states.items():
            ep = TcpEndpoint(self.sim, sid, True, self._transmit_live, owner=c)
            ep.load_state(st)
            ep.on_readable = lambda e, c=c: c.notify_stream(e.stream)
            c.kernel.streams[sid] = ep
        c.kernel.saved_streams = {}
        cost = cfg.others_base + cfg.others_per_stream * len(states)
        fm.others_ms = cost / MS
        self.net_ready_at = self.sim.now + cost
        self.mode = "live_pending"
        self.sim.after(cost, self._net_up, owner=self)

    def _transmit_live(self, seg: Segment) -> None:
        if self.mode == "live":
            self.cluster.net.send(self.name, "client", seg, SEG_OVERHEAD + len(seg.data))

    def _net_up(self) -> None:
        self.mode = "live"
        cl = self.cluster
        cl.status = "recovered"
        cl.failover.service_at = self.sim.now
        cl.failover.recovered = True
        for sid, ep in self.container.kernel.streams.items():
            end = self.packrec.contiguous_end(sid)
            if end > ep.rcv_nxt:
                ep.on_segment(Segment(sid, True, "DATA", ep.rcv_nxt, self.packrec.client_acked.get(sid, 0),
                                      self.packrec.bytes(sid, ep.rcv_nxt, end)))
            ack = self.packrec.client_acked.get(sid, 0)
            if ack > ep.snd_una:
                ep.on_segment(Segment(sid, True, "ACK", 0, ack))
            ep.ack_now()
            ep.retransmit_now()

    def _recovery_failed(self, exc: BaseException) -> None:
        cl = self.cluster
        cl.status = "failed"
        cl.failover.recovered = False
        cl.failover.reason = f"{type(exc).__name__}: {exc}"
        self.mode = "failed"
        if self.container is not None:
            self.container.kill()


class Cluster:
    """Client, primary and backup hosts on one simulated network."""

    def __init__(self, cfg: ClusterConfig, program, nthreads: int, streams: list[int], *, seed: int = 0,
                 perturbation: Optional[Perturbation] = None, trace=None):
        self.cfg = cfg
        self.program = program
        self.nthreads = nthreads
        self.streams = list(streams)
        self.sim = Sim(seed)
        self.perturbation = perturbation
        self.net = Network(self.sim, self.sim.rng("net"))
        self.net.trace = trace
        self.observer = Observer()
        self.status = "replicated" if cfg.replicated else "unreplicated"
        self.failover = FailoverMetrics()
        self.infra_fault: Optional[str] = None
        self.client = ClientHost(self)
        self.primary = PrimaryHost(self)
        self.backup = BackupHost(self)
        for h in (self.client, self.primary, self.backup):
            self.net.add_host(h)
        cl, pb = cfg.client_link, cfg.pb_link
        self.net.connect("client", "backup", cl.latency, cl.jitter, cl.bandwidth_bps)
        self.net.connect("client", "primary", cl.latency, cl.jitter, cl.bandwidth_bps)
        self.net.connect("primary", "backup", pb.latency, pb.jitter, pb.bandwidth_bps)
        self.net.service_host = "backup" if cfg.replicated else "primary"

    def boot(self) -> None:
        """Create the container and connections, commit the initial checkpoint, start everything."""
        self.primary.boot(self.program, self.nthreads, self.streams)
        if self.cfg.replicated:
            self.backup.committed = self.primary.initial_checkpoint()
        self.backup.start(self.streams)
        self.primary.start()

    def host(self, name: str):
        return self.net.hosts[name]

    # -- control API ---------------------------------------------------------
    def kill(self, name: str, t: int) -> None:
        def do():
            h = self.host(name)
            h.die()
            self.failover.kind = name
            self.failover.killed_at = self.sim.now
        self.sim.at(t, do)

    def inject_perturbation(self, perturbation: Perturbation) -> None:
        self.perturbation = perturbation
        if self.primary.container is not None:
            self.primary.container.perturbation = perturbation

    def run(self, until: int) -> None:
        self.sim.run(until)

    @property
    def serving(self) -> Optional[Container]:
        if self.status in ("recovered", "failover") and self.backup.container is not None:
            return self.backup.container
        return self.primary.container

    def metrics(self) -> dict[str, Any]:
        p = self.primary
        return {"status": self.status, "now": self.sim.now, "events": self.sim.events,
                "batches": p.batches, "checkpoints": p.checkpoints, "pbsn": p.pbsn.value,
                "bbsn": self.backup.bbsn.value, "gate_releases": self.observer.releases,
                "violations": list(self.observer.violations), "pause_ms": p.pause_ns / MS,
                "ops": (p.container.ops if p.container else 0) +
                       (self.backup.container.ops if self.backup.container else 0),
                "failover": self.failover.__dict__.copy(), "infra_fault": self.infra_fault}
