import random

import pytest

from fdmac.engine import EventQueue, Metrics
from fdmac.frame import DupMode, Frame, Kind, MacHeader, make_fd_header
from fdmac.medium import (
    Medium, PhyConstraintViolation, Reception, Topology, Transmission, carrier_sense, resolve_reception,
)
from fdmac.phy import Estimation, LinkModel


def data(src, dst, n=100):
    return Frame(MacHeader(Kind.DATA, 0, src, dst), make_fd_header(Kind.DATA, DupMode.HD), n)


def tx(src, dst, start, end, n=100):
    return Transmission(src, dst, data(src, dst, n), start, end, start + 10)


HIDDEN = Topology.from_edges(["AP", "M1", "M2"], "AP", [("AP", "M1"), ("AP", "M2")])
CLIQUE = Topology.from_edges(["AP", "M1", "M2"], "AP", [("AP", "M1"), ("AP", "M2"), ("M1", "M2")])


class Recorder:
    def __init__(self):
        self.events = []

    def on_busy(self, t):
        self.events.append(("busy", t.src))

    def on_header(self, t):
        self.events.append(("header", t.src))

    def on_frame(self, t, ok):
        self.events.append(("frame", t.src, ok))

    def on_tx_end(self, t):
        self.events.append(("tx_end", t.src))

    def on_idle(self):
        self.events.append(("idle",))


class FakeSim:
    def __init__(self, topo):
        self.now = 0
        self.q = EventQueue()
        self.trace = []
        self.metrics = Metrics(topo.n)

    def schedule(self, t, kind, fn, *args):
        return self.q.push(t, kind, fn, *args)

    def run_until(self, t_end):
        while len(self.q) and self.q.peek_time() <= t_end:
            ev = self.q.pop()
            self.now = ev.time
            ev.fn(*ev.args)
        self.now = t_end


def make_medium(topo, link=None):
    sim = FakeSim(topo)
    m = Medium(sim, topo, link or LinkModel(), random.Random(0))
    m.nodes = [Recorder() for _ in range(topo.n)]
    return sim, m


def test_topology_validation():
    with pytest.raises(ValueError):
        Topology.from_edges(["AP", "M1"], "AP", [])
    with pytest.raises(ValueError):
        Topology.from_edges(["AP", "M1"], "AP", [("AP", "AP")])
    with pytest.raises(ValueError):
        Topology.from_edges(["AP", "M1"], "AP", [("AP", "M9")])
    with pytest.raises(ValueError):
        Topology.from_edges(["AP", "AP"], "AP", [])
    t = Topology.from_edges(["AP", "M1"], "AP", [("M1", "AP")])
    assert t.in_range(0, 1) and t.in_range(1, 0)


def test_carrier_sense():
    assert not carrier_sense(0, 5, [], CLIQUE)
    assert carrier_sense(0, 5, [tx(1, 0, 0, 10)], CLIQUE)
    assert not carrier_sense(2, 5, [tx(1, 0, 0, 10)], HIDDEN)
    assert not carrier_sense(0, 10, [tx(1, 0, 0, 10)], CLIQUE)
    for a in range(3):
        for b in range(3):
            if a != b:
                t = tx(b, a, 0, 10)
                assert carrier_sense(a, 1, [t], CLIQUE) == carrier_sense(b, 1, [tx(a, b, 0, 10)], CLIQUE)


def test_resolve_reception_examples():
    lm = LinkModel()
    rng = random.Random(0)
    a, b = tx(1, 0, 0, 100), tx(2, 0, 50, 150)
    assert resolve_reception(0, a, [a, b], CLIQUE, lm, rng) == Reception.COLLIDED
    ap, inj = tx(0, 1, 0, 200), tx(2, 0, 30, 190)
    assert resolve_reception(1, ap, [ap, inj], HIDDEN, lm, rng) == Reception.DECODED
    assert resolve_reception(0, inj, [ap, inj], HIDDEN, lm, rng) == Reception.DECODED
    assert resolve_reception(2, tx(1, 0, 0, 10), [], HIDDEN, lm, rng) == Reception.NOT_IN_RANGE
    assert resolve_reception(0, a, [a], CLIQUE, lm, rng) == Reception.DECODED


def test_medium_marks_dirty_and_collisions():
    sim, m = make_medium(HIDDEN)
    ap = tx(0, 1, 0, 200)
    m.begin_tx(ap)
    sim.run_until(30)
    inj = tx(2, 0, 30, 190)
    m.begin_tx(inj)
    assert inj.si_at[0] == Estimation.DIRTY
    assert sim.metrics.dirty_receptions == 1
    sim.run_until(300)
    assert ("frame", 2, True) in m.nodes[0].events
    assert ("frame", 0, True) in m.nodes[1].events
    assert sim.metrics.collisions == 0

    sim, m = make_medium(HIDDEN)
    m.begin_tx(tx(1, 0, 0, 100))
    sim.run_until(5)
    m.begin_tx(tx(2, 0, 5, 120))
    sim.run_until(200)
    assert [e for e in m.nodes[0].events if e[0] == "frame"] == [("frame", 1, False), ("frame", 2, False)]
    assert sim.metrics.collisions == 2 and sim.metrics.collisions_at[0] == 2


def test_synchronous_start_is_clean():
    sim, m = make_medium(HIDDEN)
    a, b = tx(0, 1, 0, 100), tx(1, 0, 0, 100)
    m.begin_tx(a)
    m.begin_tx(b)
    assert b.si_at[0] == Estimation.CLEAN and a.si_at[1] == Estimation.CLEAN
    sim.run_until(200)
    assert ("frame", 0, True) in m.nodes[1].events and ("frame", 1, True) in m.nodes[0].events


def test_transmit_while_receiving_is_a_violation():
    sim, m = make_medium(CLIQUE)
    m.begin_tx(tx(1, 0, 0, 100))
    sim.run_until(50)
    with pytest.raises(PhyConstraintViolation):
        m.begin_tx(tx(0, 2, 50, 150))
    with pytest.raises(PhyConstraintViolation):
        m.begin_tx(tx(1, 2, 50, 150))


def test_snooper_may_transmit_after_header():
    sim, m = make_medium(CLIQUE)
    m.begin_tx(tx(0, 1, 0, 200))  # header ends at 10 for listeners
    sim.run_until(10)
    assert not m.is_receiving(2, 10)
    assert m.is_receiving(1, 10)
    m.begin_tx(tx(2, 0, 10, 100))


def test_busy_idle_callbacks_and_headers():
    sim, m = make_medium(HIDDEN)
    m.begin_tx(tx(1, 0, 0, 100))
    sim.run_until(200)
    assert m.nodes[0].events == [("busy", 1), ("header", 1), ("frame", 1, True), ("idle",)]
    assert m.nodes[2].events == []
    assert m.nodes[1].events == [("busy", 1), ("tx_end", 1), ("idle",)]
    assert m.last_end[0] == 100


def test_half_duplex_medium_deafens_transmitters():
    sim, m = make_medium(HIDDEN)
    m.full_duplex = False
    m.begin_tx(tx(0, 1, 0, 100))
    m.begin_tx(tx(1, 0, 0, 100))
    sim.run_until(200)
    assert ("frame", 1, False) in m.nodes[0].events


def test_bit_errors_fail_frames():
    lm = LinkModel(snr_db=7)
    sim, m = make_medium(HIDDEN, lm)
    for i in range(20):
        m.begin_tx(tx(1, 0, 1000 * i, 1000 * i + 500, n=1500))
        sim.run_until(1000 * i + 900)
    results = [e[2] for e in m.nodes[0].events if e[0] == "frame"]
    assert not any(results)
