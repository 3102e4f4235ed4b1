import random
from collections import Counter

import pytest

from fdmac.engine import Scenario, Simulator, TrafficSpec, run
from fdmac.frame import DupMode, Kind, Timing
from fdmac.mac import (
    AirtimeTable, Belief, MacBuffer, MacParams, NodeMac, Packet, SnoopState, draw_backoff, fd_ack_order,
    max_payload_within, plan_injection, reorder_buffer, snoop_observe, snoop_tx_probability, srb_resolve,
)
from fdmac.medium import Topology

from oracles import dcf_first_collision_prob, randbelow_reference, reorder_oracle

PAIR = Topology.from_edges(["AP", "M1"], "AP", [("AP", "M1")])
CLIQUE3 = Topology.from_edges(["AP", "M1", "M2"], "AP", [("AP", "M1"), ("AP", "M2"), ("M1", "M2")])


def sat(*dsts, payload=1500):
    return TrafficSpec("saturated", dsts, payload)


# -- pure operations ---------------------------------------------------------

def test_draw_backoff_matches_reference_sampler():
    a, b = random.Random(42), random.Random(42)
    assert [draw_backoff(15, a) for _ in range(1000)] == [randbelow_reference(b, 16) for _ in range(1000)]


def test_draw_backoff_chi_square():
    rng = random.Random(7)
    counts = Counter(draw_backoff(31, rng) for _ in range(100_000))
    assert set(counts) == set(range(32))
    expected = 100_000 / 32
    chi2 = sum((counts[k] - expected) ** 2 / expected for k in range(32))
    assert chi2 < 61.1  # 31 degrees of freedom, alpha 0.001


def test_draw_backoff_is_clamped_to_field_width():
    rng = random.Random(1)
    assert max(draw_backoff(4095, rng) for _ in range(20000)) <= 1023
    assert draw_backoff(0, rng) == 0
    with pytest.raises(ValueError):
        draw_backoff(-1, rng)


def test_srb_resolve():
    assert srb_resolve(3, 9) == 9
    assert srb_resolve(9, 3) == 9
    assert srb_resolve(0, 0) == 0
    assert srb_resolve(1023, 5) == 1023
    with pytest.raises(ValueError):
        srb_resolve(1024, 0)
    with pytest.raises(ValueError):
        srb_resolve(0, -1)


def test_snoop_tx_probability():
    assert snoop_tx_probability(16, 16) == 1.0
    assert snoop_tx_probability(64, 16) == 0.25
    assert snoop_tx_probability(1024, 16) == pytest.approx(1 / 64)
    with pytest.raises(ValueError):
        snoop_tx_probability(0, 16)


def test_fd_ack_order_ap_last():
    assert fd_ack_order(0, 3, 0) == (3, 0)
    assert fd_ack_order(3, 0, 0) == (3, 0)
    assert fd_ack_order(2, 1, 0) == (1, 2)


def test_max_payload_within_is_tight():
    air = AirtimeTable(MacParams())
    t = Timing()
    for budget in (60, 100, 333, 600, 1000, 1050):
        n = max_payload_within(budget, t)
        if n >= 0:
            assert air.data(n, False) <= budget
        assert air.data(n + 1, False) > budget


def test_plan_injection_examples():
    t = Timing()
    air = AirtimeTable(MacParams())
    # AP DATA has 600us left, our packet needs about 1000us: fragment.
    own = 1450
    assert air.data(own, False) > 600
    plan = plan_injection(DupMode.HD, 0, None, 400, 1000, own, t, 16, 36)
    assert plan.action == "send" and plan.frag
    assert 0 < plan.payload_bytes < own
    assert air.data(plan.payload_bytes, False) <= 600
    # Whole packet fits.
    plan = plan_injection(DupMode.HD, 0, None, 0, 1000, 200, t, 16, 36)
    assert plan == plan.__class__("send", 200, False)
    # Full-duplex AP DATA: wait for the round to end.
    plan = plan_injection(DupMode.FD, 100, 900, 120, 1000, 200, t, 16, 36)
    assert plan.action == "defer" and plan.defer_until_us == 100 + 900 + 2 * (16 + 36)
    # Nothing fits.
    assert plan_injection(DupMode.HD, 0, None, 990, 1000, 200, t, 16, 36).action == "abstain"


def test_reorder_matches_oracle():
    rng = random.Random(3)
    for _ in range(5000):
        n = rng.randrange(0, 7)
        dests = [rng.randrange(4) for _ in range(n)]
        peer = rng.randrange(4)
        depth = rng.randrange(1, 6)
        p = rng.choice([0.0, 0.3, 1.0])
        seed = rng.randrange(1 << 30)
        buf = MacBuffer(depth, p, [Packet(i, 9, d, 100, 0) for i, d in enumerate(dests)])
        reorder_buffer(buf, peer, random.Random(seed))
        draw = random.Random(seed)
        pick = bool(dests) and dests[0] != peer and draw.random() < p
        assert buf.dests() == reorder_oracle(dests, peer, depth, pick)


def test_reorder_charges_bypass_to_displaced_head():
    buf = MacBuffer(3, 1.0, [Packet(1, 0, 5, 100, 0), Packet(2, 0, 7, 100, 0), Packet(3, 0, 7, 100, 0)])
    assert buf.reorder(7, random.Random(0)) == 1
    assert [p.pid for p in buf] == [2, 1, 3]
    assert buf[1].bypass == 1
    # Depth 1 never reorders.
    buf = MacBuffer(1, 1.0, [Packet(1, 0, 5, 100, 0), Packet(2, 0, 7, 100, 0)])
    assert buf.reorder(7, random.Random(0)) is None


def test_consecutive_bypass_is_geometric():
    p = 0.5
    rng = random.Random(11)
    trials = 20000
    runs = Counter()
    for _ in range(trials):
        buf = MacBuffer(2, p, [Packet(0, 0, 5, 100, 0), Packet(1, 0, 7, 100, 0)])
        k = 0
        while buf.reorder(7, rng) is not None:
            k += 1
            buf.packets.pop(0)  # the promoted packet is served
            buf.append(Packet(k + 1, 0, 7, 100, 0))
        runs[k] += 1
        assert buf[0].bypass == k
    for k in range(6):
        tail = sum(v for j, v in runs.items() if j >= k) / trials
        assert tail == pytest.approx(p ** k, abs=4 * (p ** k * (1 - p ** k) / trials) ** 0.5 + 1e-9)


def test_snoop_beliefs():
    s = SnoopState()
    assert s.belief(1) == Belief.UNKNOWN
    snoop_observe(s, ("data", 0, 1, 1000, 52))
    snoop_observe(s, ("ack", 1))
    assert s.belief(1) == Belief.CLIQUE
    snoop_observe(s, ("data", 0, 2, 1000, 52))
    snoop_observe(s, ("silence", 2, 1051))
    assert s.belief(2) == Belief.UNKNOWN
    snoop_observe(s, ("silence", 2, 1052))
    assert s.belief(2) == Belief.HIDDEN
    # A later ACK flips the belief back.
    snoop_observe(s, ("data", 0, 2, 3000, 52))
    snoop_observe(s, ("ack", 2))
    assert s.belief(2) == Belief.CLIQUE
    # An unsolicited ACK changes nothing.
    snoop_observe(s, ("ack", 3))
    assert s.belief(3) == Belief.UNKNOWN
    with pytest.raises(ValueError):
        snoop_observe(s, ("nope",))


def test_invalidate_drops_pending_expectations():
    s = SnoopState()
    s.observe_data(0, 1, 1000, 52)
    s.invalidate()
    s.expire(1, 5000)
    assert s.belief(1) == Belief.UNKNOWN


@pytest.mark.parametrize("kw", [
    dict(difs_us=30), dict(cw_min=14), dict(cw_min=31, cw_max_limit=15), dict(bufdepth=0),
    dict(p_pick=1.5), dict(beta=0), dict(snoop_prob=-0.1), dict(retry_limit=-1),
])
def test_mac_params_validation(kw):
    with pytest.raises(ValueError):
        MacParams(**kw)


def test_airtime_table():
    air = AirtimeTable(MacParams())
    assert air.ack == 34 and air.ack_max == 36
    assert air.data(1500, True) > air.data(1500, False)
    assert air.ack_timeout == 16 + 36 + 9


# -- state machine, observed through the trace --------------------------------

def parse(rows):
    out = []
    for r in rows:
        t, node, ev, detail = r.split(",", 3)
        kv = dict(x.split("=", 1) for x in detail.split() if "=" in x)
        out.append((int(t), node, ev, detail, kv))
    return out


def capture_frames(sim):
    sent = []
    orig = sim.medium.begin_tx

    def spy(tx):
        orig(tx)
        sent.append(tx)

    sim.medium.begin_tx = spy
    return sent


def test_first_full_duplex_round_follows_one_hd_data():
    sc = Scenario(PAIR, {"AP": sat("M1"), "M1": sat("AP")}, seed=1, duration_us=50_000)
    _, rows = run(sc, trace=True)
    ev = parse(rows)
    starts = [(t, n, kv) for t, n, e, _, kv in ev if e == "tx_start" and kv["kind"] == "DATA"]
    first_fd = next(i for i, (_, _, kv) in enumerate(starts) if kv["dupmode"] == "FD")
    assert first_fd == 1
    assert starts[0][2]["dupmode"] == "HD" and starts[0][2]["hol"] == "1"
    # Setup: DATA, ACK(HOL), training ACK(HOL), then both FD DATA at the same instant.
    acks = [(t, n) for t, n, e, _, kv in ev if e == "tx_start" and kv["kind"] == "ACK"]
    assert acks[0][1] != starts[0][1] and acks[1][1] == starts[0][1]
    assert starts[1][0] == starts[2][0] and {starts[1][1], starts[2][1]} == {"AP", "M1"}


def test_full_duplex_rounds_ack_order_and_durfd():
    sc = Scenario(PAIR, {"AP": sat("M1", payload=1500), "M1": sat("AP", payload=300)}, seed=2,
                  duration_us=100_000)
    sim = Simulator(sc)
    sent = capture_frames(sim)
    rep = sim.run()
    assert rep.fd_airtime_fraction > 0.9
    mp = sc.mac
    rounds = 0
    fd = [tx for tx in sent if tx.kind == Kind.DATA and tx.frame.fd.dupmode == DupMode.FD]
    by_start = {}
    for tx in fd:
        by_start.setdefault(tx.start_us, []).append(tx)
    for start, pair in by_start.items():
        if len(pair) != 2:
            continue
        rounds += 1
        durfd = {tx.frame.fd.durfd for tx in pair}
        assert len(durfd) == 1
        durfd = durfd.pop()
        if start + durfd + 200 > sc.duration_us:
            continue
        assert durfd == max(tx.end_us - tx.start_us for tx in pair)
        acks = sorted((tx for tx in sent if tx.kind == Kind.ACK and start < tx.start_us <= start + durfd + 200),
                      key=lambda tx: tx.start_us)[:2]
        assert [a.src for a in acks] == [1, 0]
        assert acks[0].start_us == start + durfd + mp.sifs_us
        assert acks[1].start_us == acks[0].start_us + mp.sifs_us + 36
    assert rounds > 20


def test_lost_medium_purge_in_clique():
    traffic = {"AP": sat("M1"), "M1": sat("AP"), "M2": sat("AP")}
    sc = Scenario(CLIQUE3, traffic, seed=3, duration_us=300_000)
    _, rows = run(sc, trace=True)
    ev = parse(rows)
    purges = [(t, n) for t, n, e, d, _ in ev if e == "purge" and d == "lost_medium"]
    assert purges
    m2_tx = [(tt, int(kv["end"])) for tt, node, e, _, kv in ev if e == "tx_start" and node == "M2"]
    for t, n in purges:
        entered = max(tt for tt, node, e, d, _ in ev
                      if node == n and e == "state" and "->SRB_WAIT" in d and tt <= t)
        # The third node was on the air at some point during the shared backoff.
        assert any(s < t and e > entered for s, e in m2_tx)
        follow = [d for tt, node, e, d, _ in ev if tt == t and node == n and e == "state"]
        assert follow and follow[0].startswith("SRB_WAIT->CONTEND")


def test_dcf_first_attempt_collision_rate():
    traffic = {"M1": TrafficSpec("list", ("AP",), 500, times_us=(0,)),
               "M2": TrafficSpec("list", ("AP",), 500, times_us=(0,))}
    n = 2000
    hits = 0
    for seed in range(n):
        rep, _ = run(Scenario(CLIQUE3, traffic, seed=seed, duration_us=600))
        hits += rep.collisions > 0
    p = dcf_first_collision_prob(15)
    assert hits / n == pytest.approx(p, abs=4 * (p * (1 - p) / n) ** 0.5)


def test_collision_doubles_contention_window(monkeypatch):
    traffic = {"M1": TrafficSpec("list", ("AP",), 500, times_us=(0,)),
               "M2": TrafficSpec("list", ("AP",), 500, times_us=(0,))}
    seed = next(s for s in range(200)
                if run(Scenario(CLIQUE3, traffic, seed=s, duration_us=600))[0].collisions)
    seen = []
    orig = NodeMac._data_failure

    def spy(self, out):
        before = self.cw
        orig(self, out)
        seen.append((self.idx, before, self.cw))

    monkeypatch.setattr(NodeMac, "_data_failure", spy)
    run(Scenario(CLIQUE3, traffic, seed=seed, duration_us=1000))
    assert sorted(seen) == [(1, 15, 31), (2, 15, 31)]


def test_retry_limit_drops_and_conserves():
    # M1 and M2 are hidden from each other and always collide at the AP.
    hidden = Topology.from_edges(["AP", "M1", "M2"], "AP", [("AP", "M1"), ("AP", "M2")])
    mac = MacParams(snooping=False, retry_limit=2, cw_min=0, cw_max_limit=0)
    traffic = {"M1": TrafficSpec("list", ("AP",), 1500, times_us=(0,)),
               "M2": TrafficSpec("list", ("AP",), 1500, times_us=(0,))}
    sim = Simulator(Scenario(hidden, traffic, mac, seed=0, duration_us=100_000))
    rep = sim.run()
    assert rep.drops == 2 and rep.delivered_pkts == 0
    assert all(acc == gen for acc, gen in sim.conservation().values())


def test_virtual_only_mobiles_never_contend():
    traffic = {"AP": sat("M1", "M2"), "M1": sat("AP"), "M2": sat("AP")}
    sc = Scenario(CLIQUE3, traffic, MacParams(virtual_only=True, bufdepth=2, p_pick=0.5), seed=4,
                  duration_us=100_000)
    _, rows = run(sc, trace=True)
    ev = parse(rows)
    hd_mobile = [kv for t, n, e, _, kv in ev if e == "tx_start" and n != "AP" and kv["kind"] == "DATA"
                 and kv["dupmode"] == "HD"]
    assert hd_mobile == []
    assert any(e == "tx_start" and kv["dupmode"] == "FD" for t, n, e, _, kv in ev)
