import dataclasses
import random

import pytest

from hybridrep.checkpoint import (Checkpoint, CheckpointError, EpochConfig, IncrementalBase, build_cursor,
                                  capture, deserialize, has_accept, materialize, pause_all, restore, serialize)
from hybridrep.ndlog import SyscallKind
from hybridrep.rr_runtime import Costs, Phase, ReplayDivergence, rr_syscall
from hybridrep.sim import MS, US, Sim
from hybridrep.workloads import KvConfig, KvServer

from scripted import Host, Pipe, Script, recorder, replay_from, results

K = SyscallKind
SEND = rr_syscall(K.STREAM_SEND, {"stream": 0, "data": b"x"})


def test_epoch_config_validation():
    with pytest.raises(ValueError):
        EpochConfig(0)


def test_empty_store_round_trip():
    sim, c, _, _ = recorder(KvServer(KvConfig(workers=2)), 2)
    ck = deserialize(serialize(capture(c, 0)))
    r = restore(ck, Sim(1), Host(), KvServer(KvConfig(workers=2)))
    assert r.mem.data == c.mem.data
    assert all(v == {} for k, v in r.mem.data.items() if k.startswith("shard/"))


def test_ten_thousand_keys_byte_equal():
    sim, c, _, _ = recorder(KvServer(KvConfig()), 4)
    rng = random.Random(3)
    for i in range(10_000):
        c.mem.data[f"shard/{i % 8}"][f"k{i}"] = [rng.randbytes(6).hex(), rng.randrange(1, 9)]
    ck = capture(c, 3, 17)
    blob = serialize(ck)
    back = deserialize(blob)
    r = restore(back, Sim(1), Host(), KvServer(KvConfig()))
    again = capture(r, 3, 17)
    assert again.workload_state == ck.workload_state
    assert again.stream_state == ck.stream_state
    a, b = again.runtime(), ck.runtime()
    # the restored container sits in the replay phase and has no log attached yet
    for k in ("threads", "kernel", "record_time"):
        assert a[k] == b[k]
    assert a["phase"] == "replay" and b["phase"] == "record"


@pytest.mark.parametrize("cut", [0, 5, 20, -3])
def test_corrupt_blob_rejected(cut):
    sim, c, _, _ = recorder(KvServer(KvConfig()), 4)
    blob = serialize(capture(c, 0))
    with pytest.raises(CheckpointError):
        deserialize(blob[:cut])


def test_flipped_byte_rejected():
    sim, c, _, _ = recorder(KvServer(KvConfig()), 4)
    blob = bytearray(serialize(capture(c, 0)))
    blob[30] ^= 0xFF
    with pytest.raises(CheckpointError):
        deserialize(bytes(blob))


def test_restore_without_checkpoint():
    with pytest.raises(CheckpointError):
        restore(None, Sim(0), Host(), None)


def test_capture_refuses_thread_in_library():
    prog = Script([[rr_syscall(K.CLOCK_READ)]], [[1000]])
    sim, c, _, _ = recorder(prog, 1, jitter=0)
    c.start()
    sim.run(1200)
    with pytest.raises(CheckpointError):
        capture(c, 1)


def test_incremental_materializes_to_full():
    sim, c, _, _ = recorder(KvServer(KvConfig()), 4)
    base = IncrementalBase()
    c0 = capture(c, 0, base=base)
    assert not c0.incremental
    c.mem.data["shard/1"]["a"] = ["v", 1]
    c.mem.data["extra"] = 5
    d1 = deserialize(serialize(capture(c, 1, base=base)))
    assert d1.incremental and d1.base_epoch == 0
    assert set(d1.workload()["delta"]["set"]) == {"shard/1", "extra"}
    full1 = materialize(d1, c0)
    assert full1.workload()["mem"] == c.mem.data
    del c.mem.data["extra"]
    d2 = capture(c, 2, base=base)
    assert d2.workload()["delta"] == {"set": {}, "del": ["extra"]}
    assert materialize(d2, full1).workload()["mem"] == c.mem.data
    with pytest.raises(CheckpointError):
        materialize(d2, c0)


def test_empty_logs_go_live_at_once():
    prog = Script([[SEND]])
    sim, c, log, _ = recorder(prog, 1, streams={0: Pipe()})
    ck = capture(c, 0)
    rsim, rc, cur = replay_from(ck, log, prog)
    assert cur.pending_output_count == 0
    rc.kernel.streams[0] = Pipe()
    rc.begin_replay(cur)
    assert rc.phase == Phase.LIVE


def test_pending_counts_released_outputs():
    prog = Script([[SEND] * 8])
    sim, c, log, pbsn = recorder(prog, 1, streams={0: Pipe()})
    ck = capture(c, 0)
    c.start()
    sim.run()
    sends = log.syscall_logs[0]
    # pretend the backup has batches covering only the first five sends
    sends = [s if i < 5 else dataclasses.replace(s, output_seq=9) for i, s in enumerate(sends)]
    cur = build_cursor(ck, {}, {0: sends}, [], 5)
    assert cur.pending_output_count == 5


def test_cursor_drops_entries_before_checkpoint():
    prog = Script([[rr_syscall(K.CLOCK_READ), SEND, rr_syscall(K.CLOCK_READ), SEND]], [[1000] * 4])
    sim, c, log, _ = recorder(prog, 1, streams={0: Pipe()}, jitter=0)
    c.start()
    sim.run(8 * US)
    got = []
    pause_all(c, got.append)
    sim.run(30 * US)
    assert got
    ck = capture(c, 1)
    c.resume()
    sim.run()
    cur = build_cursor(ck, log.lock_logs, log.syscall_logs, log.order_log, 10**9)
    first = cur.syscall_logs[0][0].call_seq
    assert first == ck.counters()["calls"]["0"] > 0
    assert not has_accept(cur)


# -- checkpoints landing between the before and after hooks ---------------------------

OPEN_A = rr_syscall(K.RESOURCE_OPEN, {"name": "a"})
OPEN_B = rr_syscall(K.RESOURCE_OPEN, {"name": "b"})


def scenario(pause_at, scripts, costs, streams=None):
    """Record, checkpoint at ``pause_at``, finish recording, then replay from that checkpoint."""
    sim, c, log, _ = recorder(Script(scripts, costs), len(scripts), streams=streams or {0: Pipe()}, jitter=0)
    c.start()
    sim.run(pause_at)
    got = []
    pause_all(c, got.append)
    sim.run(pause_at + 20 * US)
    assert got, "pause did not complete"
    positions = [(t.pos, t.in_hook) for t in c.threads]
    ck = deserialize(serialize(capture(c, 1)))
    c.resume()
    sim.run()
    rsim, rc, cur = replay_from(ck, log, Script(scripts, costs), jitter=0)
    rc.kernel.streams[0] = Pipe()
    rc.begin_replay(cur)
    skipped = [t.syscall_skipped for t in rc.threads]
    rsim.run()
    return c, rc, positions, skipped


# timeline with no jitter: issue at 1000, before hook done 2500, executed 3500, after hook at 4500
@pytest.mark.parametrize("pause_at,pos,skipped", [(3000, "kernel", True), (4000, "after", False)])
def test_checkpoint_between_hooks_state_mutating(pause_at, pos, skipped):
    c, rc, positions, sk = scenario(pause_at, [[OPEN_A, SEND], [OPEN_B, SEND]], [[1000, 1000], [9000, 1000]])
    assert positions[0] == (pos, True)
    assert sk[0] is skipped
    assert rc.failure is None
    assert results(rc) == results(c)
    assert rc.kernel.fds == c.kernel.fds
    assert rc.phase == Phase.LIVE


@pytest.mark.parametrize("pause_at,pos", [(3000, "kernel"), (4000, "after")])
def test_checkpoint_between_hooks_consumable(pause_at, pos):
    recv = rr_syscall(K.STREAM_RECV, {"streams": [0], "start": 0})
    c, rc, positions, sk = scenario(pause_at, [[recv, SEND]], [[1000, 1000]], streams={0: Pipe(b"hello")})
    assert positions[0] == (pos, True)
    assert rc.failure is None
    assert results(rc) == results(c)
    # a recv that completed before the checkpoint is already reflected in the saved stream
    assert rc.replay_recv == ({0: 5} if pos == "kernel" else {})


def test_checkpoint_with_thread_blocked_in_recv():
    recv = rr_syscall(K.STREAM_RECV, {"streams": [0], "start": 0})
    pipe = Pipe()
    sim, c, log, _ = recorder(Script([[recv, SEND]]), 1, streams={0: pipe}, jitter=0)
    c.start()
    sim.run(1 * MS)
    got = []
    pause_all(c, got.append)
    ck = deserialize(serialize(capture(c, 1)))
    assert ck.runtime()["threads"][0]["in_hook"] and ck.runtime()["threads"][0]["pos"] == "kernel"
    c.resume()
    pipe.rbuf += b"late"
    c.notify_stream(0)
    sim.run()
    assert results(c)[0][0] == [0, b"late"]
    rsim, rc, cur = replay_from(ck, log, Script([[recv, SEND]]))
    rc.kernel.streams[0] = Pipe()
    rc.begin_replay(cur)
    rsim.run()
    assert rc.failure is None and results(rc) == results(c)
    assert rc.replay_recv == {0: 4}


def test_wrong_polarity_would_diverge():
    """Forcing re-execution of an open that already ran before the checkpoint breaks replay."""
    scripts, costs = [[OPEN_A, SEND], [OPEN_B, SEND]], [[1000, 1000], [9000, 1000]]
    sim, c, log, _ = recorder(Script(scripts, costs), 2, streams={0: Pipe()}, jitter=0)
    c.start()
    sim.run(4000)
    pause_all(c, lambda tok: None)
    sim.run(30 * US)
    ck = capture(c, 1)
    c.resume()
    sim.run()
    rsim, rc, cur = replay_from(ck, log, Script(scripts, costs), jitter=0)
    rc.kernel.streams[0] = Pipe()
    rc.threads[0].pos = "kernel"    # pretend the call had not run
    fails = []
    rc.on_fail = fails.append
    rc.begin_replay(cur)
    rsim.run()
    assert fails and isinstance(fails[0], ReplayDivergence)
