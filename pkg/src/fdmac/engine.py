"""Deterministic discrete-event core, traffic generation and metrics."""

from __future__ import annotations

import heapq
import random
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields

import numpy as np

from .mac import AirtimeTable, MacParams, NodeMac
from .medium import Medium, Topology
from .phy import DEFAULT_TABLES, LinkModel, preset_lookup

EVENT_KINDS = ("TxStart", "TxEnd", "BackoffExpiry", "AckTimeout", "SnoopTimer", "PacketArrival")


class ConfigError(ValueError):
    """Invalid scenario. ``field`` names the offending setting."""

    def __init__(self, field_name: str, message: str, line: int | None = None, column: int | None = None):
        self.field = field_name
        self.message = message
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(f"{where}{field_name}: {message}")


class CausalityError(RuntimeError):
    pass


# -- events -----------------------------------------------------------------

class Event:
    __slots__ = ("time", "seq", "kind", "fn", "args", "cancelled")

    def __init__(self, time: int, seq: int, kind: str, fn, args=()):
        self.time = time
        self.seq = seq
        self.kind = kind
        self.fn = fn
        self.args = args
        self.cancelled = False

    def __lt__(self, other: "Event") -> bool:
        return (self.time, self.seq) < (other.time, other.seq)

    def __repr__(self):
        return f"Event({self.time}, {self.seq}, {self.kind})"


class EventQueue:
    """Min-heap ordered by (time, insertion sequence)."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def __len__(self):
        return len(self._heap)

    def push(self, time: int, kind: str, fn, *args) -> Event:
        ev = Event(time, self._seq, kind, fn, args)
        self._seq += 1
        heapq.heappush(self._heap, (time, ev.seq, ev))
        return ev

    def pop(self) -> Event:
        return heapq.heappop(self._heap)[2]

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None


# -- scenario ---------------------------------------------------------------

@dataclass(frozen=True)
class TrafficSpec:
    """Per-node offered load.

    kind is "saturated" (queue kept full), "poisson" (rate_pps packets per
    second) or "list" (one packet at each time in ``times_us``). Destinations
    are drawn uniformly from ``dsts``.
    """

    kind: str
    dsts: tuple[str, ...]
    payload_bytes: int = 1500
    rate_pps: float = 0.0
    times_us: tuple[int, ...] = ()
    dst_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("saturated", "poisson", "list"):
            raise ConfigError("kind", f"unknown traffic kind {self.kind!r}")
        if not self.dsts:
            raise ConfigError("dst", "at least one destination is required")
        if not 1 <= self.payload_bytes <= 4095:
            raise ConfigError("payload", "payload must be in 1..4095 bytes")
        if self.kind == "poisson" and self.rate_pps <= 0:
            raise ConfigError("rate", "poisson traffic needs rate > 0")
        if any(t < 0 for t in self.times_us):
            raise ConfigError("at", "arrival times must be >= 0")


@dataclass(frozen=True)
class PhyParams:
    snr_db: float = 40.0
    preset: str = "B"
    device: bool = True
    dirty_penalty_db: float = 3.0
    noise_floor_dbm: float = -95.0

    def link_model(self) -> LinkModel:
        try:
            preset = preset_lookup(self.preset, self.device)
        except KeyError as e:
            raise ConfigError("preset", str(e)) from None
        return LinkModel(snr_db=self.snr_db, preset=preset, tx_power_dbm=DEFAULT_TABLES.tx_power_dbm,
                         noise_floor_dbm=self.noise_floor_dbm, dirty_penalty_db=self.dirty_penalty_db)


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    traffic: dict = field(default_factory=dict)  # node name -> TrafficSpec
    mac: MacParams = field(default_factory=MacParams)
    phy: PhyParams = field(default_factory=PhyParams)
    seed: int | None = None
    duration_us: int = 1_000_000
    repeats: int = 1

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed", "a seed is required")
        if self.duration_us <= 0:
            raise ConfigError("duration_us", "must be > 0")
        if self.repeats < 1:
            raise ConfigError("repeats", "must be >= 1")
        topo = self.topology
        resolved = {}
        for name, spec in self.traffic.items():
            if name not in topo.names:
                raise ConfigError("traffic", f"unknown node {name!r}")
            src = topo.index(name)
            ids = []
            for d in spec.dsts:
                if d not in topo.names:
                    raise ConfigError("dst", f"unknown destination {d!r}")
                j = topo.index(d)
                if j == src or not topo.in_range(src, j):
                    raise ConfigError("dst", f"{name} cannot reach {d}")
                ids.append(j)
            resolved[name] = TrafficSpec(spec.kind, spec.dsts, spec.payload_bytes, spec.rate_pps,
                                         spec.times_us, tuple(ids))
        object.__setattr__(self, "traffic", resolved)

    def with_(self, **kw) -> "Scenario":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return Scenario(**vals)


# -- RNG splitting ----------------------------------------------------------

def rng_stream(seed: int, repeat: int, tag: str) -> random.Random:
    """Independent stream for (seed, repeat, tag).

    The tag (e.g. "mac:M1") is hashed with CRC-32 into the SeedSequence spawn
    key, so each node's stream depends only on the seed and its own name.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(repeat, zlib.crc32(tag.encode())))
    return random.Random(int.from_bytes(ss.generate_state(4, np.uint32).tobytes(), "little"))


# -- metrics ----------------------------------------------------------------

class Metrics:
    """Mutable counters filled in during a run."""

    def __init__(self, n: int):
        self.generated = Counter()
        self.acked = Counter()
        self.dropped = Counter()
        self.delivered_pkts = Counter()
        self.delivered_bytes = Counter()
        self._seen = set()
        self.collisions = 0
        self.collisions_at = [0] * n
        self.dirty_receptions = 0
        self.data_airtime = 0
        self.fd_airtime = 0
        self.head_delay_sum = [0] * n
        self.head_delay_n = [0] * n
        self.injections = 0
        self.opportunities = set()
        self.collided_opportunities = set()

    def deliver(self, tx) -> None:
        pid, offset, nbytes, final = tx.meta
        key = (tx.src, pid, offset)
        if key in self._seen:
            return
        self._seen.add(key)
        flow = (tx.src, tx.dst)
        self.delivered_bytes[flow] += nbytes
        if final:
            self.delivered_pkts[flow] += 1

    def opportunity(self, parent_id: int) -> None:
        self.opportunities.add(parent_id)


@dataclass(frozen=True)
class MetricsReport:
    seed: int
    repeat: int
    duration_us: int
    delivered_pkts: int
    delivered_bytes: int
    goodput_mbps: float
    normalized_throughput: float
    mean_head_delay: float
    fd_airtime_fraction: float
    collisions: int
    drops: int
    generated: int
    injections: int
    opportunities: int
    opportunity_collisions: int
    dirty_receptions: int
    flows: str

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        return out

    @property
    def collision_rate(self) -> float:
        return self.opportunity_collisions / self.opportunities if self.opportunities else 0.0


def hd_baseline_goodput(mac: MacParams, payload_bytes: int) -> float:
    """Saturated single-link half-duplex goodput in bits per microsecond.

    One exchange costs DIFS, the mean initial backoff, the DATA, SIFS and a
    plain ACK; there are no collisions on a single link.
    """
    air = AirtimeTable(mac)
    cycle = mac.difs_us + mac.cw_min / 2 * mac.slot_us + air.data(payload_bytes, False) + mac.sifs_us + air.ack
    return 8 * payload_bytes / cycle


def normalized_throughput(report: MetricsReport, scenario: Scenario) -> float:
    if report.delivered_bytes == 0:
        return 0.0
    sizes = [t.payload_bytes for t in scenario.traffic.values()]
    base = hd_baseline_goodput(scenario.mac, round(sum(sizes) / len(sizes)))
    return 8 * report.delivered_bytes / scenario.duration_us / base


# -- simulator --------------------------------------------------------------

class Simulator:
    def __init__(self, scenario: Scenario, repeat: int = 0, trace=False):
        """``trace`` is False, True (collect rows in a list) or any sink with ``append``."""
        self.scenario = scenario
        self.repeat = repeat
        topo = scenario.topology
        self.names = topo.names
        self.now = 0
        self.queue = EventQueue()
        if trace is True:
            trace = []
        self.trace = trace if trace is not False and trace is not None else None
        self.metrics = Metrics(topo.n)
        seed = scenario.seed
        self.medium = Medium(self, topo, scenario.phy.link_model(), rng_stream(seed, repeat, "medium"))
        self.medium.full_duplex = scenario.mac.fd_enabled
        air = AirtimeTable(scenario.mac)
        self.nodes = []
        for i, name in enumerate(topo.names):
            spec = scenario.traffic.get(name)
            node = NodeMac(self, self.medium, i, i == topo.ap, topo.ap, scenario.mac, air,
                           rng_stream(seed, repeat, f"mac:{name}"), spec,
                           rng_stream(seed, repeat, f"traffic:{name}"))
            self.nodes.append(node)
        self.medium.nodes = self.nodes

    def schedule(self, t: int, kind: str, fn, *args) -> Event:
        if t < self.now:
            raise CausalityError(f"{kind} scheduled at {t}us, before now={self.now}us")
        return self.queue.push(t, kind, fn, *args)

    def _arrivals(self, node: NodeMac) -> None:
        spec = node.traffic
        if spec is None or spec.kind == "saturated":
            return
        rng = node.traffic_rng
        dsts = spec.dst_ids

        def pick():
            return dsts[0] if len(dsts) == 1 else dsts[rng.randrange(len(dsts))]

        if spec.kind == "list":
            for t in sorted(spec.times_us):
                if t < self.scenario.duration_us:
                    self.schedule(t, "PacketArrival", node.arrival, pick(), spec.payload_bytes)
            return
        rate = spec.rate_pps / 1e6

        def arrive():
            node.arrival(pick(), spec.payload_bytes)
            nxt = self.now + max(1, round(rng.expovariate(rate)))
            if nxt < self.scenario.duration_us:
                self.schedule(nxt, "PacketArrival", arrive)

        first = max(1, round(rng.expovariate(rate)))
        if first < self.scenario.duration_us:
            self.schedule(first, "PacketArrival", arrive)

    def run(self) -> MetricsReport:
        for node in self.nodes:
            self._arrivals(node)
            node.start()
        end = self.scenario.duration_us
        q = self.queue._heap
        pop = heapq.heappop
        while q and q[0][0] < end:
            t, _, ev = pop(q)
            if ev.cancelled:
                continue
            self.now = t
            ev.fn(*ev.args)
        self.now = end
        return self.report()

    def report(self) -> MetricsReport:
        m = self.metrics
        sc = self.scenario
        names = self.names
        delivered_bytes = sum(m.delivered_bytes.values())
        served = sum(m.head_delay_n[i] for i in range(len(names)) if i == sc.topology.ap)
        bypass = m.head_delay_sum[sc.topology.ap]
        flows = sorted(set(m.generated) | set(m.delivered_pkts))
        flow_str = ";".join(
            f"{names[s]}>{names[d]}:{m.delivered_pkts[(s, d)]}:{m.delivered_bytes[(s, d)]}" for s, d in flows)
        report = MetricsReport(
            seed=sc.seed,
            repeat=self.repeat,
            duration_us=sc.duration_us,
            delivered_pkts=sum(m.delivered_pkts.values()),
            delivered_bytes=delivered_bytes,
            goodput_mbps=8 * delivered_bytes / sc.duration_us,
            normalized_throughput=0.0,
            mean_head_delay=bypass / served if served else 0.0,
            fd_airtime_fraction=m.fd_airtime / m.data_airtime if m.data_airtime else 0.0,
            collisions=m.collisions,
            drops=sum(m.dropped.values()),
            generated=sum(m.generated.values()),
            injections=m.injections,
            opportunities=len(m.opportunities),
            opportunity_collisions=len(m.collided_opportunities & m.opportunities),
            dirty_receptions=m.dirty_receptions,
            flows=flow_str,
        )
        if sc.traffic:
            object.__setattr__(report, "normalized_throughput", normalized_throughput(report, sc))
        return report

    def conservation(self) -> dict:
        """Per-flow acked + dropped + queued versus generated (sender view)."""
        m = self.metrics
        queued = defaultdict(int)
        for node in self.nodes:
            for p in node.buffer:
                queued[(p.src, p.dst)] += 1
        return {f: (m.acked[f] + m.dropped[f] + queued[f], m.generated[f]) for f in m.generated}

    def trace_rows(self) -> list[str]:
        names = self.names
        rows = self.trace if isinstance(self.trace, list) else []
        return [f"{t},{names[n]},{ev},{detail}" for t, n, ev, detail in rows]


TRACE_HEADER = "time_us,node,event,detail"


def run(scenario: Scenario, trace=False, repeat: int = 0):
    """Run one repeat. Returns (MetricsReport, trace rows or None).

    With ``trace=True`` the rows are formatted ``time_us,node,event,detail``
    strings; a sink object receives raw tuples and None is returned for rows.
    """
    sim = Simulator(scenario, repeat, trace)
    report = sim.run()
    return report, (sim.trace_rows() if trace is True else None)
