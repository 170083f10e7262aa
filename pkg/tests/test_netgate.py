from hypothesis import given, settings, strategies as st

from hybridrep.net import Segment, SocketState
from hybridrep.netgate import (GateState, PackRecord, ReconstructionError, ReleaseRequest, gate_pump,
                               gate_submit, reconstruct_sockets, record_incoming, release_requests)

import pytest


def seg(sid, start, n):
    return Segment(sid, False, "DATA", start, 0, bytes(n))


def gate(*sids):
    g = GateState()
    for s in sids:
        g.add_stream(s)
    return g


def test_covered_packet_released():
    g = gate(1)
    assert not g.hold(seg(1, 0, 100))
    gate_submit(g, ReleaseRequest(1, 100))
    out = gate_pump(g)
    assert [(s.seq, s.end) for s in out] == [(0, 100)]


def test_partial_cover_holds_second():
    g = gate(1)
    g.hold(seg(1, 0, 100))
    g.hold(seg(1, 100, 100))
    gate_submit(g, ReleaseRequest(1, 100))
    assert [(s.seq, s.end) for s in gate_pump(g)] == [(0, 100)]
    assert g.held_bytes() == 100


def test_fifo_order_across_streams():
    g = gate(1, 2)
    g.hold(seg(1, 0, 10))
    g.hold(seg(2, 0, 10))
    gate_submit(g, ReleaseRequest(1, 10))
    gate_submit(g, ReleaseRequest(2, 10))
    assert [s.stream for s in gate_pump(g)] == [1, 2]


def test_already_released_passes_and_stopped_holds():
    g = gate(1)
    gate_submit(g, ReleaseRequest(1, 50))
    gate_pump(g)
    assert g.hold(seg(1, 0, 50))  # retransmission of released bytes
    g.stopped = True
    assert not g.hold(seg(1, 50, 10))
    gate_submit(g, ReleaseRequest(1, 60))
    assert gate_pump(g) == []


def test_stale_request_ignored():
    g = gate(1)
    gate_submit(g, ReleaseRequest(1, 50))
    gate_submit(g, ReleaseRequest(1, 20))
    gate_pump(g)
    assert g.release_seq[1] == 50


def test_release_requests_from_events():
    class E:
        result = [10, 3, 40]
    assert release_requests([E()]) == [ReleaseRequest(3, 40)]


# -- PackRec ---------------------------------------------------------------------

def test_duplicate_is_single_copy():
    p = PackRecord()
    record_incoming(p, 1, 0, b"a" * 50)
    record_incoming(p, 1, 0, b"a" * 50)
    assert p.contiguous_end(1) == 50


def test_out_of_order_reassembles():
    p = PackRecord()
    record_incoming(p, 1, 50, b"b" * 50)
    assert p.contiguous_end(1) == 0
    record_incoming(p, 1, 0, b"a" * 50)
    assert p.bytes(1, 0, 100) == b"a" * 50 + b"b" * 50


def test_empty_stream():
    p = PackRecord()
    assert p.contiguous_end(7) == 0 and p.bytes(7, 0, 10) == b""


@settings(max_examples=300, deadline=None)
@given(st.binary(min_size=1, max_size=200), st.lists(st.tuples(st.integers(0, 199), st.integers(1, 60)),
                                                       max_size=30), st.randoms())
def test_any_delivery_order_reassembles(data, pieces, rnd):
    segs = [(s, data[s:s + n]) for s, n in pieces if s < len(data)]
    segs.append((0, data))  # the stream is eventually delivered in full
    rnd.shuffle(segs)
    p = PackRecord()
    for s, d in segs:
        record_incoming(p, 1, s, d)
    assert p.bytes(1, 0, len(data)) == data and p.contiguous_end(1) == len(data)


# -- reconstruction ----------------------------------------------------------------

def test_no_traffic_keeps_checkpoint_state():
    st0 = SocketState(30, 30, 12, b"", b"")
    p = PackRecord()
    record_incoming(p, 1, 0, b"x" * 12)
    assert reconstruct_sockets({1: st0}, {}, {}, p) == {1: st0}


def test_released_send_and_unread_request():
    st0 = SocketState(0, 0, 0, b"", b"")
    p = PackRecord()
    record_incoming(p, 1, 0, b"r" * 50)
    p.note_server_ack(1, 50)
    p.note_client_ack(1, 100)
    out = reconstruct_sockets({1: st0}, {1: b"s" * 100}, {}, p)[1]
    assert out.sent_seq == 100 and out.acked_seq == 100 and out.write_queue == b""
    assert out.recv_queue == b"r" * 50 and out.rcv_seq == 50


def test_unreleased_send_goes_to_write_queue():
    st0 = SocketState(10, 10, 0, b"", b"")
    out = reconstruct_sockets({1: st0}, {1: b"pending"}, {}, PackRecord())[1]
    assert out.sent_seq == 17 and out.write_queue == b"pending"


def test_replayed_reads_advance_read_position():
    st0 = SocketState(0, 0, 5, b"ab", b"")
    p = PackRecord()
    record_incoming(p, 1, 0, b"xyzabcdefg")
    out = reconstruct_sockets({1: st0}, {}, {1: 2}, p)[1]
    assert out.read_seq == 5 and out.recv_queue == b"cdefg"


def test_reconstruction_errors():
    st0 = SocketState(0, 0, 0, b"", b"")
    p = PackRecord()
    p.note_client_ack(1, 5)
    with pytest.raises(ReconstructionError):
        reconstruct_sockets({1: st0}, {}, {}, p)
    with pytest.raises(ReconstructionError):
        reconstruct_sockets({1: st0}, {}, {1: 3}, PackRecord())
    p = PackRecord()
    p.note_server_ack(1, 4)
    with pytest.raises(ReconstructionError):
        reconstruct_sockets({1: st0}, {}, {}, p)
