"""Shared single-channel medium with a binary, reciprocal range model.

Propagation delay is zero. Any overlap of two in-range frames at a
receiver destroys both (no capture); a node's own transmission is
cancelled by its PHY and never collides with what it receives.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

from .frame import Frame, Kind
from .phy import Estimation, LinkModel, NodeState


class PhyConstraintViolation(RuntimeError):
    """The MAC tried to start a transmission the PHY cannot support."""


class Reception(enum.Enum):
    DECODED = "decoded"
    COLLIDED = "collided"
    NOT_IN_RANGE = "not_in_range"
    FAILED = "failed"  # no collision, but bit errors in the payload


@dataclass(frozen=True)
class Topology:
    names: tuple[str, ...]
    ap: int
    neighbors: tuple[frozenset[int], ...]

    @classmethod
    def from_edges(cls, names, ap: str, edges) -> "Topology":
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValueError("duplicate node names")
        index = {n: i for i, n in enumerate(names)}
        if ap not in index:
            raise ValueError(f"AP {ap!r} is not a node")
        adj: list[set[int]] = [set() for _ in names]
        for a, b in edges:
            if a not in index or b not in index:
                raise ValueError(f"edge {a}-{b} names an unknown node")
            if a == b:
                raise ValueError(f"self-loop on {a}")
            adj[index[a]].add(index[b])
            adj[index[b]].add(index[a])
        ap_i = index[ap]
        for i, n in enumerate(names):
            if i != ap_i and ap_i not in adj[i]:
                raise ValueError(f"mobile {n} is not in range of the AP")
        return cls(names, ap_i, tuple(frozenset(s) for s in adj))

    @property
    def n(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def in_range(self, a: int, b: int) -> bool:
        return b in self.neighbors[a]


@dataclass(eq=False)
class Transmission:
    src: int
    dst: int
    frame: Frame
    start_us: int
    end_us: int
    header_at_us: int
    injected: bool = False
    tx_id: int = -1  # assigned by the medium, unique within a run
    collided_at: set = field(default_factory=set)
    si_at: dict = field(default_factory=dict)  # receiver -> Estimation while it transmits
    meta: tuple | None = None  # (packet id, byte offset, bytes, last fragment)
    parent_id: int = -1  # for injections: the AP DATA this one rides on

    @property
    def kind(self) -> Kind:
        return self.frame.mac.kind

    def overlaps(self, other: "Transmission") -> bool:
        return self.start_us < other.end_us and other.start_us < self.end_us

    def active_at(self, t: int) -> bool:
        return self.start_us <= t < self.end_us


def carrier_sense(node: int, at_us: int, transmissions, topology: Topology) -> bool:
    """True (busy) iff an in-range transmission is on the air at ``at_us``."""
    return any(tx.active_at(at_us) and tx.src != node and topology.in_range(node, tx.src)
               for tx in transmissions)


def resolve_reception(rx: int, t: Transmission, concurrent, topology: Topology,
                      link: LinkModel, rng) -> Reception:
    """Outcome of ``t`` at ``rx`` given every transmission that may overlap it."""
    if not topology.in_range(rx, t.src):
        return Reception.NOT_IN_RANGE
    own = None
    for c in concurrent:
        if c is t or not c.overlaps(t):
            continue
        if c.src == rx:
            own = c
        elif topology.in_range(rx, c.src):
            return Reception.COLLIDED
    mode = Estimation.DIRTY if own is not None and own.start_us < t.start_us else Estimation.CLEAN
    p = link.success_prob(t.src, rx, t.frame.payload_bytes, own is not None, mode)
    if p >= 1.0 or rng.random() < p:
        return Reception.DECODED
    return Reception.FAILED


class Medium:
    """Incremental bookkeeping of who hears what, driven by the engine."""

    def __init__(self, sim, topology: Topology, link: LinkModel, rng):
        self.sim = sim
        self.topology = topology
        self.link = link
        self.rng = rng
        n = topology.n
        self.nbrs = tuple(tuple(sorted(s)) for s in topology.neighbors)
        self.sense = tuple(self.nbrs[i] + (i,) for i in range(n))
        self.incoming: list[list[Transmission]] = [[] for _ in range(n)]
        self.own: list[Transmission | None] = [None] * n
        self.busy = [0] * n
        self.last_end = [0] * n
        self.nodes = []
        self._p_cache: dict = {}
        self._ids = itertools.count()
        self.full_duplex = True  # False: a transmitting node hears nothing

    # -- PHY state ---------------------------------------------------------
    def is_receiving(self, node: int, t: int) -> bool:
        for tx in self.incoming[node]:
            if tx.start_us < t and (tx.dst == node or t < tx.header_at_us):
                return True
        return False

    def phy_state(self, node: int, t: int) -> NodeState:
        if self.own[node] is not None:
            return NodeState.TRANSMITTING
        if self.is_receiving(node, t):
            return NodeState.RECEIVING
        return NodeState.IDLE

    def carrier_busy(self, node: int) -> bool:
        return self.busy[node] > 0

    def others_busy(self, node: int) -> bool:
        return bool(self.incoming[node])

    # -- transmissions -----------------------------------------------------
    def begin_tx(self, tx: Transmission) -> None:
        sim = self.sim
        t = sim.now
        src = tx.src
        if self.own[src] is not None or self.is_receiving(src, t):
            raise PhyConstraintViolation(
                f"node {self.topology.names[src]} cannot start a transmission at {t}us")
        self.own[src] = tx
        tx.tx_id = next(self._ids)
        for o in self.incoming[src]:
            if o.dst == src:
                o.si_at[src] = Estimation.CLEAN
        trace = sim.trace
        if trace is not None:
            fd = tx.frame.fd
            trace.append((t, src, "tx_start",
                          f"kind={tx.kind.name} dst={tx.dst} dupmode={fd.dupmode.name} "
                          f"hol={int(fd.hol)} frag={int(tx.frame.mac.frag)} end={tx.end_us}"))
        for n in self.nbrs[src]:
            inc = self.incoming[n]
            if inc:
                tx.collided_at.add(n)
                for o in inc:
                    o.collided_at.add(n)
            inc.append(tx)
            own = self.own[n]
            if own is not None:
                tx.si_at[n] = Estimation.DIRTY if own.start_us < t else Estimation.CLEAN
            if trace is not None:
                until = tx.end_us if tx.dst == n else tx.header_at_us
                mode = tx.si_at.get(n, Estimation.CLEAN).value
                trace.append((t, n, "rx_start", f"src={src} dst={tx.dst} until={until} mode={mode}"))
            if tx.dst == n and n in tx.si_at and tx.si_at[n] == Estimation.DIRTY:
                sim.metrics.dirty_receptions += 1
        nodes = self.nodes
        for n in self.sense[src]:
            self.busy[n] += 1
            nodes[n].on_busy(tx)
        sim.schedule(tx.header_at_us, "TxStart", self._header, tx)
        sim.schedule(tx.end_us, "TxEnd", self._end, tx)

    def _header(self, tx: Transmission) -> None:
        nodes = self.nodes
        for n in self.nbrs[tx.src]:
            nodes[n].on_header(tx)

    def _end(self, tx: Transmission) -> None:
        sim = self.sim
        t = sim.now
        src, dst = tx.src, tx.dst
        self.own[src] = None
        for n in self.nbrs[src]:
            self.incoming[n].remove(tx)
        nodes = self.nodes
        if dst in self.topology.neighbors[src]:
            result = self._outcome(tx, dst)
            if result == Reception.COLLIDED:
                sim.metrics.collisions += 1
                sim.metrics.collisions_at[dst] += 1
                if tx.injected:
                    sim.metrics.collided_opportunities.add(tx.parent_id)
            if sim.trace is not None:
                sim.trace.append((t, dst, "rx_end",
                                  f"src={src} start={tx.start_us} kind={tx.kind.name} "
                                  f"result={result.value}"))
            nodes[dst].on_frame(tx, result == Reception.DECODED)
        nodes[src].on_tx_end(tx)
        for n in self.sense[src]:
            self.busy[n] -= 1
            self.last_end[n] = t
            if self.busy[n] == 0:
                nodes[n].on_idle()

    def _outcome(self, tx: Transmission, rx: int) -> Reception:
        if rx in tx.collided_at:
            return Reception.COLLIDED
        mode = tx.si_at.get(rx)
        if mode is not None and not self.full_duplex:
            return Reception.COLLIDED
        key = (tx.src, rx, tx.frame.payload_bytes, mode)
        p = self._p_cache.get(key)
        if p is None:
            if mode is None:
                p = self.link.success_prob(tx.src, rx, tx.frame.payload_bytes, False)
            else:
                p = self.link.success_prob(tx.src, rx, tx.frame.payload_bytes, True, mode)
            self._p_cache[key] = p
        if p >= 1.0 or self.rng.random() < p:
            return Reception.DECODED
        return Reception.FAILED
