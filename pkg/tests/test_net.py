import io
import random

import pytest

from hybridrep.net import RTO, Network, Segment, SocketState, TcpEndpoint, TraceWriter, read_trace
from hybridrep.sim import MS, US, Perturbation, Sim

from scripted import Host


class Wire:
    """Two endpoints joined by a lossy, fixed-delay link."""

    def __init__(self, delay=50 * US, drop=None):
        self.sim = Sim(0)
        self.drop = drop or (lambda seg: False)
        self.client = TcpEndpoint(self.sim, 1, False, lambda s: self._tx(s, self.server))
        self.server = TcpEndpoint(self.sim, 1, True, lambda s: self._tx(s, self.client))
        self.delay = delay

    def _tx(self, seg, dst):
        if not self.drop(seg):
            self.sim.after(self.delay, dst.on_segment, seg)


def test_segment_record_round_trip():
    s = Segment(3, True, "DATA", 10, 4, b"abc")
    r = s.to_record()
    assert r["dir"] == "c2s" and r["v"] == 1
    assert Segment.from_record(r) == s and s.end == 13


def test_socket_state_plain_and_check():
    st = SocketState(10, 4, 7, b"xy", b"abcdef")
    assert SocketState.from_plain(st.to_plain()) == st
    assert st.read_seq == 5
    with pytest.raises(ValueError):
        SocketState(10, 4, 7, b"", b"a").check()


def test_in_order_delivery_and_ack():
    w = Wire()
    got = []
    w.server.on_readable = lambda ep: got.append(ep.read())
    w.client.send(b"hello ")
    w.client.send(b"world")
    w.sim.run()
    assert b"".join(got) == b"hello world"
    assert w.client.snd_una == 11 and w.client.wbuf == b""


def test_retransmission_after_rto():
    first = [True]

    def drop(seg):
        if seg.data and first[0]:
            first[0] = False
            return True
        return False

    w = Wire(drop=drop)
    got = []
    w.server.on_readable = lambda ep: got.append((w.sim.now, ep.read()))
    w.client.send(b"data")
    w.sim.run()
    assert got[0][1] == b"data"
    assert RTO <= got[0][0] < RTO + 1 * MS
    assert w.client.retransmits == 1


def test_gap_is_not_accepted():
    sim = Sim(0)
    sent = []
    ep = TcpEndpoint(sim, 0, True, sent.append)
    ep.on_segment(Segment(0, True, "DATA", 5, 0, b"later"))
    assert ep.rcv_nxt == 0 and sent[-1].ack == 0
    ep.on_segment(Segment(0, True, "DATA", 0, 0, b"01234"))
    ep.on_segment(Segment(0, True, "DATA", 3, 0, b"34567"))
    assert ep.read() == b"01234567"


def test_load_state_resumes_stream():
    sim = Sim(0)
    out = []
    ep = TcpEndpoint(sim, 0, True, out.append)
    ep.load_state(SocketState(20, 15, 9, b"req", b"xxxxx"))
    assert ep.read_seq == 6
    ep.retransmit_now()
    assert out[-1].seq == 15 and out[-1].data == b"xxxxx"
    ep.on_segment(Segment(0, True, "ACK", 9, 20))
    assert ep.wbuf == b"" and ep.snd_una == 20


def test_network_drops_from_dead_host_and_keeps_fifo():
    sim = Sim(0)
    net = Network(sim, random.Random(0))
    a, b = Host("a"), Host("b")
    got = []
    b.on_message = lambda m, src: got.append((sim.now, m))
    net.add_host(a)
    net.add_host(b)
    net.connect("a", "b", 60 * US, 5 * US, 1e9)
    for i in range(20):
        net.send("a", "b", i, 1000)
    sim.run()
    assert [m for _, m in got] == list(range(20))
    assert all(t >= 60 * US for t, _ in got)
    a.alive = False
    assert not net.send("a", "b", 99)


def test_trace_round_trip():
    buf = io.StringIO()
    tw = TraceWriter(buf)
    tw(5, "backup", "client", Segment(1, False, "DATA", 0, 0, b"hi"))
    tw(6, "primary", "backup", ("hb",))
    buf.seek(0)
    recs = read_trace(buf)
    assert len(recs) == 1
    rec, seg = recs[0]
    assert rec["t"] == 5 and rec["dst"] == "client" and seg.data == b"hi"
    with pytest.raises(ValueError):
        read_trace(io.StringIO('{"format": "other"}\n'))


def test_perturbation_halves_speed_while_busy():
    p = Perturbation(random.Random(1), 1, 10**9, busy_ms=(10, 10), sleep_ms=(10, 10))
    s = p._starts[0][0]
    assert p.finish(0, s, 2 * MS) == s + 4 * MS
    # starting in the idle gap: runs at full speed until the next busy interval
    e = p._ends[0][0]
    assert p.finish(0, e, 5 * MS) == e + 5 * MS
    assert p.finish(0, e, 12 * MS) == e + 10 * MS + 4 * MS


def test_sim_drops_callbacks_of_dead_owner():
    sim = Sim(0)
    h = Host()
    hit = []
    sim.after(10, hit.append, 1, owner=h)
    sim.after(20, hit.append, 2)
    h.alive = False
    sim.run()
    assert hit == [2] and sim.now == 20
