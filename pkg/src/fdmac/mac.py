"""FD-MAC node state machine.

DCF-style contention, the two-way full-duplex handshake with shared random
backoff, peer-queue knowledge and purging, header snooping with hidden-node
injection, and virtual contention over the transmit buffer. A node is a
passive object: the engine delivers events (carrier busy/idle, headers,
decoded frames, timer expiries) and the node reacts by scheduling timers
or starting transmissions on the medium.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .frame import (
    CRC_BITS, MAC_BITS, OPT_FIELD_BITS, FD_MIN_BITS, SRB_MAX, DupMode, Frame, Kind,
    MacHeader, Timing, airtime_us, header_time_us, make_fd_header,
)
from .medium import Transmission
from .phy import Estimation


# -- parameters -------------------------------------------------------------

@dataclass(frozen=True)
class MacParams:
    """DCF timing plus the FD-MAC knobs. Times in microseconds."""

    slot_us: int = 9
    sifs_us: int = 16
    difs_us: int = 34
    cw_min: int = 15
    cw_max_limit: int = 1023
    retry_limit: int = 7
    preamble_us: int = 20
    base_rate_bps: float = 6e6
    data_rate_bps: float = 12e6
    fd_enabled: bool = True
    bufdepth: int = 1
    p_pick: float = 0.0
    beta: float = 16.0
    snoop_prob: float | None = None
    snooping: bool = True
    virtual_only: bool = False
    queue_target: int = 8

    def __post_init__(self):
        if self.difs_us != self.sifs_us + 2 * self.slot_us:
            raise ValueError("difs_us must equal sifs_us + 2 * slot_us")
        for name in ("cw_min", "cw_max_limit"):
            v = getattr(self, name)
            if v < 0 or (v + 1) & v:
                raise ValueError(f"{name}={v} is not of the form 2^k - 1")
        if self.cw_min > self.cw_max_limit:
            raise ValueError("cw_min > cw_max_limit")
        if self.bufdepth < 1:
            raise ValueError("bufdepth must be >= 1")
        if not 0.0 <= self.p_pick <= 1.0:
            raise ValueError("p_pick must lie in [0, 1]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.snoop_prob is not None and not 0.0 <= self.snoop_prob <= 1.0:
            raise ValueError("snoop_prob must lie in [0, 1]")
        if self.retry_limit < 0 or self.queue_target < 1:
            raise ValueError("retry_limit >= 0 and queue_target >= 1 required")

    @property
    def timing(self) -> Timing:
        return Timing(self.preamble_us, self.base_rate_bps, self.data_rate_bps)


class AirtimeTable:
    """Cached airtimes for the frame shapes the MAC emits."""

    def __init__(self, params: MacParams):
        self.timing = params.timing
        t = self.timing
        self.ack = self._air(Kind.ACK, DupMode.HD, False, 0)
        self.ack_max = self._air(Kind.ACK, DupMode.HD, True, 0)
        self.ack_header = header_time_us(_dummy(Kind.ACK, DupMode.HD, True, 0), t)
        self.ack_timeout = params.sifs_us + self.ack_max + params.slot_us
        self._cache: dict = {}

    def _air(self, kind, dupmode, hol, payload):
        return airtime_us(_dummy(kind, dupmode, hol, payload), self.timing)

    def data(self, payload_bytes: int, fd: bool) -> int:
        key = (payload_bytes, fd)
        v = self._cache.get(key)
        if v is None:
            v = self._cache[key] = self._air(Kind.DATA, DupMode.FD if fd else DupMode.HD, False, payload_bytes)
        return v

    def data_header(self, fd: bool) -> int:
        return header_time_us(_dummy(Kind.DATA, DupMode.FD if fd else DupMode.HD, False, 0), self.timing)


def _dummy(kind, dupmode, hol, payload) -> Frame:
    return Frame(MacHeader(kind, 0, 0, 1), make_fd_header(kind, dupmode, hol), payload)


# -- pure protocol operations -----------------------------------------------

def draw_backoff(cw_max: int, rng) -> int:
    """Uniform slot count in [0, min(cw_max, 1023)]; the SRB field is 10 bits."""
    if cw_max < 0:
        raise ValueError("cw_max must be >= 0")
    return rng.randrange(min(cw_max, SRB_MAX) + 1)


def srb_resolve(srb_data: int, srb_ack: int) -> int:
    for v in (srb_data, srb_ack):
        if not 0 <= v <= SRB_MAX:
            raise ValueError(f"SRB value {v} outside [0, {SRB_MAX}]")
    return max(srb_data, srb_ack)


def snoop_tx_probability(cw_max: float, beta: float) -> float:
    """Injection probability min(1, beta / cw_max) for a snooping node."""
    if cw_max < 1 or beta <= 0:
        raise ValueError("need cw_max >= 1 and beta > 0")
    return min(1.0, beta / cw_max)


def fd_ack_order(a: int, b: int, ap: int) -> tuple[int, int]:
    """(first, second) ACK senders of a full-duplex round; the AP always goes last."""
    if a == ap:
        return b, a
    if b == ap:
        return a, b
    return (a, b) if a < b else (b, a)


def max_payload_within(air_us: int, timing: Timing, fd: bool = False) -> int:
    """Largest DATA payload whose airtime fits in ``air_us``; -1 if none fits."""
    header_bits = MAC_BITS + FD_MIN_BITS + OPT_FIELD_BITS * (1 + fd)
    budget_bits = math.floor((air_us - timing.preamble_us) * timing.data_rate_bps / 1e6 + 1e-9)
    return (budget_bits - header_bits - CRC_BITS) // 8


@dataclass
class Packet:
    pid: int
    src: int
    dst: int
    size: int
    enqueued_us: int
    remaining: int = -1
    bypass: int = 0
    retries: int = 0

    def __post_init__(self):
        if self.remaining < 0:
            self.remaining = self.size

    @property
    def offset(self) -> int:
        return self.size - self.remaining


class MacBuffer:
    """Transmit queue; only the first ``bufdepth`` entries are visible to reordering."""

    def __init__(self, bufdepth: int = 1, p_pick: float = 0.0, packets=()):
        if bufdepth < 1:
            raise ValueError("bufdepth must be >= 1")
        self.bufdepth = bufdepth
        self.p_pick = p_pick
        self.packets: list[Packet] = list(packets)

    def __len__(self):
        return len(self.packets)

    def __iter__(self):
        return iter(self.packets)

    def __getitem__(self, i):
        return self.packets[i]

    def head(self) -> Packet | None:
        return self.packets[0] if self.packets else None

    def append(self, p: Packet) -> None:
        self.packets.append(p)

    def remove(self, p: Packet) -> None:
        self.packets.remove(p)

    def dests(self) -> list[int]:
        return [p.dst for p in self.packets]

    def reorder(self, fd_peer: int, rng) -> int | None:
        """Virtual contention at the end of a full-duplex exchange.

        If the head is not for ``fd_peer``, then with probability p_pick the
        first packet for ``fd_peer`` among positions 2..bufdepth becomes the
        head, and the displaced head is charged one bypass. Returns the
        promoted index or None.
        """
        pk = self.packets
        if not pk or pk[0].dst == fd_peer:
            return None
        if rng.random() >= self.p_pick:
            return None
        for j in range(1, min(self.bufdepth, len(pk))):
            if pk[j].dst == fd_peer:
                pk[0].bypass += 1
                pk.insert(0, pk.pop(j))
                return j
        return None


def reorder_buffer(buf: MacBuffer, fd_peer: int, rng) -> MacBuffer:
    buf.reorder(fd_peer, rng)
    return buf


@dataclass
class PeerKnowledge:
    peer: int
    peer_has_hol: bool = False
    peer_durnxt_us: int = 0
    my_durnxt_us: int = 0
    my_pending_srb: int = 0
    peer_srb: int = 0


class Belief(enum.Enum):
    UNKNOWN = "unknown"
    CLIQUE = "clique"
    HIDDEN = "hidden"


@dataclass
class SnoopState:
    """What a node has inferred about its neighbourhood from overheard headers."""

    beta: float = 16.0
    beliefs: dict = field(default_factory=dict)
    pending: dict = field(default_factory=dict)  # mobile -> ACK deadline (us)
    last_seen: tuple | None = None

    def belief(self, node: int) -> Belief:
        return self.beliefs.get(node, Belief.UNKNOWN)

    def observe_data(self, src: int, dst: int, end_us: int, ack_wait_us: int, fd_header=None, dur: int = 0):
        """AP->dst DATA overheard: expect dst's ACK within one ACK duration."""
        self.pending[dst] = end_us + ack_wait_us
        if fd_header is not None:
            self.last_seen = (src, dst, dur, fd_header.hol, fd_header.dupmode, fd_header.durfd)

    def observe_ack(self, src: int) -> None:
        if src in self.pending:
            del self.pending[src]
            self.beliefs[src] = Belief.CLIQUE

    def expire(self, dst: int, now_us: int) -> None:
        deadline = self.pending.get(dst)
        if deadline is not None and now_us >= deadline:
            del self.pending[dst]
            self.beliefs[dst] = Belief.HIDDEN

    def invalidate(self) -> None:
        """The node transmitted, so it could not have heard a pending ACK."""
        self.pending.clear()


def snoop_observe(state: SnoopState, overheard) -> SnoopState:
    """Apply one observation: ("data", src, dst, end_us, ack_wait_us),
    ("ack", src) or ("silence", dst, now_us)."""
    tag = overheard[0]
    if tag == "data":
        state.observe_data(*overheard[1:])
    elif tag == "ack":
        state.observe_ack(overheard[1])
    elif tag == "silence":
        state.expire(overheard[1], overheard[2])
    else:
        raise ValueError(f"unknown observation {tag!r}")
    return state


@dataclass(frozen=True)
class InjectionPlan:
    action: str  # "send", "abstain" or "defer"
    payload_bytes: int = 0
    frag: bool = False
    defer_until_us: int = 0


def plan_injection(dupmode: DupMode, data_start_us: int, durfd_us: int | None, now_us: int,
                   ap_end_us: int, own_remaining_bytes: int, timing: Timing, sifs_us: int,
                   ack_us: int) -> InjectionPlan:
    """Size a hidden-node injection so it ends no later than the AP's DATA."""
    if dupmode == DupMode.FD:
        return InjectionPlan("defer", defer_until_us=data_start_us + (durfd_us or 0) + 2 * (sifs_us + ack_us))
    fit = max_payload_within(ap_end_us - now_us, timing)
    if fit < 1:
        return InjectionPlan("abstain")
    if fit >= own_remaining_bytes:
        return InjectionPlan("send", own_remaining_bytes, False)
    return InjectionPlan("send", fit, True)


# -- node -------------------------------------------------------------------

IDLE = "IDLE"
CONTEND = "CONTEND"
HOLD = "HOLD"
TX_DATA = "TX_DATA"
WAIT_ACK = "WAIT_ACK"
FD_SETUP = "FD_SETUP"
SRB_WAIT = "SRB_WAIT"
FD_DATA = "FD_DATA"
INJECT = "INJECT"
WAIT_INJ_ACK = "WAIT_INJ_ACK"

_SNOOP_READY = (IDLE, CONTEND, HOLD)


class Outstanding:
    __slots__ = ("tx", "packet", "nbytes", "dst", "hol", "fd", "injected", "timeout")

    def __init__(self, tx, packet, nbytes, dst, hol, fd=False, injected=False):
        self.tx = tx
        self.packet = packet
        self.nbytes = nbytes
        self.dst = dst
        self.hol = hol
        self.fd = fd
        self.injected = injected
        self.timeout = None


class NodeMac:
    def __init__(self, sim, medium, idx: int, is_ap: bool, ap: int, params: MacParams,
                 air: AirtimeTable, rng, traffic=None, traffic_rng=None):
        self.sim = sim
        self.medium = medium
        self.idx = idx
        self.is_ap = is_ap
        self.ap = ap
        self.p = params
        self.air = air
        self.rng = rng
        self.traffic = traffic
        self.traffic_rng = traffic_rng
        self.state = IDLE
        self.buffer = MacBuffer(params.bufdepth, params.p_pick)
        self.cw = params.cw_min
        self.backoff: int | None = None
        self.timer = None
        self.count_start = 0
        self.nav_until = 0
        self.hold_until = 0
        self.hold_timer = None
        self.reserved_until = 0
        self.outstanding: Outstanding | None = None
        self.peer: PeerKnowledge | None = None
        self.snoop = SnoopState(params.beta)
        self.last_data_tx: Transmission | None = None
        self.inj_ack_pending = False
        self.pending_acks: list = []
        self._after_tx = {}
        # full-duplex round scratch
        self.fd_t0 = 0
        self.fd_start = 0
        self.srb_lost = False
        self.peer_data_ok = False
        self.peer_ack = None
        self.fd_sent_hol = False
        self.fd_sent_srb = 0
        self.fd_my_acked = False
        self.fd_timer = None
        self.setup_timer = None
        self._pid = 0

    # -- helpers -----------------------------------------------------------
    @property
    def name(self) -> str:
        return self.sim.names[self.idx]

    def set_state(self, new: str, cause: str) -> None:
        old = self.state
        if old == new:
            return
        self.state = new
        tr = self.sim.trace
        if tr is not None:
            tr.append((self.sim.now, self.idx, "state", f"{old}->{new} {cause}"))

    def _log(self, event: str, detail: str) -> None:
        tr = self.sim.trace
        if tr is not None:
            tr.append((self.sim.now, self.idx, event, detail))

    def _cancel(self, ev):
        if ev is not None:
            ev.cancelled = True
        return None

    def enqueue(self, dst: int, size: int) -> None:
        self._pid += 1
        self.buffer.append(Packet(self._pid, self.idx, dst, size, self.sim.now))
        self.sim.metrics.generated[(self.idx, dst)] += 1

    def refill(self) -> None:
        tr = self.traffic
        if tr is None or tr.kind != "saturated":
            return
        while len(self.buffer) < max(self.p.queue_target, self.p.bufdepth + 1):
            dsts = tr.dst_ids
            dst = dsts[0] if len(dsts) == 1 else dsts[self.traffic_rng.randrange(len(dsts))]
            self.enqueue(dst, tr.payload_bytes)

    def arrival(self, dst: int, size: int) -> None:
        self.enqueue(dst, size)
        if self.state == IDLE:
            self._contend("arrival")

    def _next_for(self, dst: int, skip: int):
        """Packet following the first ``skip`` buffer entries if it is for ``dst``."""
        pk = self.buffer.packets
        if self.p.fd_enabled and len(pk) > skip and pk[skip].dst == dst:
            return pk[skip]
        return None

    # -- contention --------------------------------------------------------
    def start(self) -> None:
        self.refill()
        if self.buffer:
            self._contend("start")

    def _contend(self, cause: str) -> None:
        self.timer = self._cancel(self.timer)
        if not self.buffer or (self.p.virtual_only and not self.is_ap):
            self.set_state(IDLE, cause)
            return
        now = self.sim.now
        if self.hold_until > now:
            self.set_state(HOLD, cause)
            self.hold_timer = self._cancel(self.hold_timer)
            self.hold_timer = self.sim.schedule(self.hold_until, "SnoopTimer", self._hold_over)
            return
        self.set_state(CONTEND, cause)
        if self.backoff is None:
            self.backoff = draw_backoff(self.cw, self.rng)
        self._arm()

    def _hold_over(self) -> None:
        self.hold_timer = None
        if self.state == HOLD:
            self._contend("hold_expired")

    def _arm(self) -> None:
        self.timer = self._cancel(self.timer)
        m = self.medium
        if m.busy[self.idx]:
            return
        idle_start = max(m.last_end[self.idx], self.nav_until, self.reserved_until)
        self.count_start = max(self.sim.now, idle_start + self.p.difs_us)
        self.timer = self.sim.schedule(self.count_start + self.backoff * self.p.slot_us,
                                       "BackoffExpiry", self._expire)

    def on_busy(self, tx: Transmission) -> None:
        st = self.state
        if st == CONTEND:
            tm = self.timer
            if tm is None:
                return
            now = self.sim.now
            if tm.time <= now:
                return  # decided at this slot boundary; transmit anyway
            if now > self.count_start:
                self.backoff -= (now - self.count_start) // self.p.slot_us
            self.timer = self._cancel(tm)
        elif st == SRB_WAIT:
            # The peer starting its FD DATA on the shared slot is expected.
            if tx.src != self.idx and not (tx.src == self.peer.peer and self.sim.now == self.fd_start):
                self.srb_lost = True

    def on_idle(self) -> None:
        if self.state == CONTEND:
            self._arm()

    def _expire(self) -> None:
        self.timer = None
        if self.state != CONTEND:
            return
        if self.medium.own[self.idx] is not None or self.medium.is_receiving(self.idx, self.sim.now):
            self.backoff = 0
            return
        self.backoff = None
        self._send_data()

    # -- transmit paths ------------------------------------------------------
    def _begin(self, tx: Transmission, after=None) -> None:
        self.snoop.invalidate()
        self.medium.begin_tx(tx)
        if after is not None:
            self._after_tx[tx.tx_id] = after
        if tx.kind == Kind.DATA:
            self.last_data_tx = tx
            m = self.sim.metrics
            air = tx.end_us - tx.start_us
            m.data_airtime += air
            if tx.frame.fd.dupmode == DupMode.FD:
                m.fd_airtime += air

    def _tx(self, dst: int, frame: Frame, meta=None, injected=False, parent_id=-1) -> Transmission:
        now = self.sim.now
        fd = frame.fd.dupmode == DupMode.FD
        if frame.mac.kind == Kind.DATA:
            air = self.air.data(frame.payload_bytes, fd)
            hdr = self.air.data_header(fd)
        else:
            air = self.air.ack_max if frame.fd.hol else self.air.ack
            hdr = self.air.ack_header
        tx = Transmission(self.idx, dst, frame, now, now + air, now + hdr, injected=injected)
        tx.meta = meta
        tx.parent_id = parent_id
        return tx

    def _data_frame(self, dst, nbytes, dupmode, hol_pkt, dur, durfd=0, frag=False) -> Frame:
        hol = hol_pkt is not None
        durnxt = self.air.data(hol_pkt.remaining, True) if hol else 0
        return Frame(MacHeader(Kind.DATA, dur, self.idx, dst, frag),
                     make_fd_header(Kind.DATA, dupmode, hol, durnxt, durfd, False, 0), nbytes)

    def _ack_frame(self, dst, hol, durnxt=0, srb=0, dur=0) -> Frame:
        return Frame(MacHeader(Kind.ACK, dur, self.idx, dst, False),
                     make_fd_header(Kind.ACK, DupMode.HD, hol, durnxt, 0, hol, srb), 0)

    def _send_data(self) -> None:
        pkt = self.buffer.head()
        dst = pkt.dst
        p = self.p
        hol_pkt = self._next_for(dst, 1)
        dur = p.sifs_us + self.air.ack_max
        if hol_pkt is not None:
            dur += p.sifs_us + self.air.ack_max
        frame = self._data_frame(dst, pkt.remaining, DupMode.HD, hol_pkt, dur)
        tx = self._tx(dst, frame, meta=(pkt.pid, pkt.offset, pkt.remaining, True))
        self.outstanding = Outstanding(tx, pkt, pkt.remaining, dst, hol_pkt is not None)
        self.set_state(TX_DATA, "backoff_expired")
        self._begin(tx)

    def on_tx_end(self, tx: Transmission) -> None:
        after = self._after_tx.pop(tx.tx_id, None)
        out = self.outstanding
        if out is not None and out.tx is tx:
            if self.state == TX_DATA:
                self.set_state(WAIT_ACK, "data_sent")
                out.timeout = self.sim.schedule(tx.end_us + self.air.ack_timeout, "AckTimeout",
                                                self._ack_timeout, out)
            elif self.state == INJECT:
                self.set_state(WAIT_INJ_ACK, "data_sent")
                deadline = self._inj_parent_end + 2 * (self.p.sifs_us + self.air.ack_max) + self.p.slot_us
                out.timeout = self.sim.schedule(deadline, "AckTimeout", self._ack_timeout, out)
        if after is not None:
            after()

    def _ack_timeout(self, out: Outstanding) -> None:
        if self.outstanding is not out:
            return
        self.outstanding = None
        self._data_failure(out)
        self._contend("ack_timeout")

    def _data_success(self, out: Outstanding) -> None:
        pkt = out.packet
        pkt.remaining -= out.nbytes
        self.cw = self.p.cw_min
        pkt.retries = 0
        m = self.sim.metrics
        if pkt.remaining <= 0:
            self.buffer.remove(pkt)
            m.acked[(self.idx, pkt.dst)] += 1
            m.head_delay_sum[self.idx] += pkt.bypass
            m.head_delay_n[self.idx] += 1
            self.refill()

    def _data_failure(self, out: Outstanding) -> None:
        pkt = out.packet
        pkt.retries += 1
        self.cw = min(2 * self.cw + 1, self.p.cw_max_limit)
        self.backoff = None
        if pkt.retries > self.p.retry_limit:
            if pkt in self.buffer.packets:
                self.buffer.remove(pkt)
            self.sim.metrics.dropped[(self.idx, pkt.dst)] += 1
            self._log("drop", f"pid={pkt.pid} dst={pkt.dst}")
            self.cw = self.p.cw_min
            self.refill()

    # -- acknowledgements ----------------------------------------------------
    def _schedule_ack(self, at_us: int, dst: int, build, after=None) -> None:
        """Send an ACK at ``at_us``; ``build()`` returns the frame at send time."""
        self.sim.schedule(at_us, "TxStart", self._send_ack, dst, build, after)

    def _send_ack(self, dst, build, after) -> None:
        now = self.sim.now
        m = self.medium
        if m.own[self.idx] is not None or m.is_receiving(self.idx, now):
            self._log("ack_suppressed", f"dst={dst}")
            if after is not None:
                after()
            return
        frame = build()
        self._begin(self._tx(dst, frame), after)

    def on_header(self, tx: Transmission) -> None:
        if tx.dst == self.idx:
            return
        f = tx.frame
        nav = tx.end_us + f.mac.dur
        if nav > self.nav_until:
            self.nav_until = nav
        if self.p.snooping and not self.is_ap:
            self._snoop(tx)

    def on_frame(self, tx: Transmission, ok: bool) -> None:
        if not ok:
            return
        if tx.kind == Kind.DATA:
            self._on_data(tx)
        else:
            self._on_ack(tx)

    def _on_data(self, tx: Transmission) -> None:
        sim = self.sim
        sim.metrics.deliver(tx)
        f = tx.frame
        src = tx.src
        p = self.p
        peer = self.peer
        if (f.fd.dupmode == DupMode.FD and self.state == FD_DATA and peer is not None
                and src == peer.peer):
            self.peer_data_ok = True
            return
        if tx.si_at.get(self.idx) == Estimation.DIRTY and self.last_data_tx is not None:
            # Asynchronous reception that began while this node was sending.
            at = self.last_data_tx.end_us + 2 * p.sifs_us + self.air.ack_max
            self.inj_ack_pending = True
            self.reserved_until = max(self.reserved_until, at + self.air.ack)

            def done():
                self.inj_ack_pending = False

            self._schedule_ack(at, src, lambda: self._ack_frame(src, False), done)
            return
        head = self.buffer.head()
        ready = self.state in _SNOOP_READY or self.state == WAIT_ACK and False
        my_hol = (p.fd_enabled and head is not None and head.dst == src and ready
                  and not self.inj_ack_pending)
        durnxt = self.air.data(head.remaining, True) if my_hol else 0
        setup = my_hol and f.fd.hol
        dur = p.sifs_us + self.air.ack_max if setup else 0
        at = sim.now + p.sifs_us
        if setup:
            self.timer = self._cancel(self.timer)
            self.hold_timer = self._cancel(self.hold_timer)
            self.backoff = None
            self.peer = PeerKnowledge(src, True, f.fd.durnxt, durnxt)
            self.set_state(FD_SETUP, "hol_match")

            def arm_setup_timeout():
                end = sim.now
                self.setup_timer = sim.schedule(end + self.air.ack_timeout, "AckTimeout",
                                                self._setup_timeout)

            self._schedule_ack(at, src, lambda: self._ack_frame(src, True, durnxt, 0, dur), arm_setup_timeout)
        else:
            self._schedule_ack(at, src, lambda: self._ack_frame(src, my_hol, durnxt))

    def _setup_timeout(self) -> None:
        self.setup_timer = None
        if self.state == FD_SETUP:
            self._purge("setup_timeout")

    def _on_ack(self, tx: Transmission) -> None:
        f = tx.frame
        src = tx.src
        peer = self.peer
        if self.state == FD_SETUP and peer is not None and src == peer.peer and self.setup_timer is not None:
            self.setup_timer = self._cancel(self.setup_timer)
            if f.fd.hol:
                peer.peer_durnxt_us = f.fd.durnxt
                self._start_srb(srb_resolve(0, f.fd.srb))
            else:
                self._purge("peer_hol0")
            return
        out = self.outstanding
        if out is None or src != out.dst:
            return
        out.timeout = self._cancel(out.timeout)
        self.outstanding = None
        self._data_success(out)
        if out.fd:
            self.fd_my_acked = True
            self.peer_ack = f.fd
            if self._fd_first():
                self.fd_timer = self._cancel(self.fd_timer)
                if self.fd_sent_hol and f.fd.hol and self.peer is not None:
                    self.peer.peer_durnxt_us = f.fd.durnxt
                    self.peer.peer_srb = f.fd.srb
                    self._start_srb(srb_resolve(self.fd_sent_srb, f.fd.srb))
                else:
                    self._purge("hol0")
            return
        if out.injected:
            self._contend("inject_acked")
            return
        if out.hol and f.fd.hol and self.p.fd_enabled and not self.inj_ack_pending:
            head = self.buffer.head()
            if head is not None and head.dst == out.dst:
                durnxt = self.air.data(head.remaining, True)
                self.peer = PeerKnowledge(out.dst, True, f.fd.durnxt, durnxt)
                self.set_state(FD_SETUP, "two_way_setup")
                self._schedule_ack(self.sim.now + self.p.sifs_us, out.dst,
                                   lambda: self._ack_frame(out.dst, True, durnxt, 0),
                                   lambda: self._start_srb(0))
                return
        self._contend("tx_success")

    # -- shared random backoff and full-duplex rounds -------------------------
    def _fd_first(self) -> bool:
        peer = self.peer
        if peer is None:
            return not self.is_ap
        return fd_ack_order(self.idx, peer.peer, self.ap)[0] == self.idx

    def _start_srb(self, srb: int) -> None:
        if self.peer is None:
            self._contend("no_peer")
            return
        now = self.sim.now
        self.set_state(SRB_WAIT, f"srb={srb}")
        self.srb_lost = self.medium.others_busy(self.idx)
        self.fd_start = now + srb * self.p.slot_us + self.p.difs_us
        self.sim.schedule(self.fd_start, "BackoffExpiry", self._srb_expire)

    def _srb_expire(self) -> None:
        if self.state != SRB_WAIT:
            return
        now = self.sim.now
        peer = self.peer.peer
        others = [o for o in self.medium.incoming[self.idx] if not (o.src == peer and o.start_us == now)]
        if self.srb_lost or others:
            self._purge("lost_medium")
            return
        head = self.buffer.head()
        if head is None or head.dst != peer:
            self._purge("no_packet_for_peer")
            return
        self._send_fd_data(head)

    def _send_fd_data(self, pkt: Packet) -> None:
        p = self.p
        peer = self.peer
        air = self.air.data(pkt.remaining, True)
        durfd = max(air, peer.my_durnxt_us, peer.peer_durnxt_us)
        hol_pkt = self._next_for(peer.peer, 1)
        dur = durfd - air + 2 * (p.sifs_us + self.air.ack_max)
        frame = self._data_frame(peer.peer, pkt.remaining, DupMode.FD, hol_pkt, dur, durfd)
        tx = self._tx(peer.peer, frame, meta=(pkt.pid, pkt.offset, pkt.remaining, True))
        self.outstanding = Outstanding(tx, pkt, pkt.remaining, peer.peer, hol_pkt is not None, fd=True)
        self.fd_t0 = self.sim.now
        self.peer_data_ok = False
        self.peer_ack = None
        self.fd_sent_hol = False
        self.fd_sent_srb = 0
        self.fd_my_acked = False
        self.set_state(FD_DATA, "srb_expired")
        self._begin(tx)
        self.sim.schedule(self.fd_t0 + durfd, "TxEnd", self._fd_ack_phase)

    def _fd_ack_phase(self) -> None:
        if self.state != FD_DATA:
            return
        p = self.p
        now = self.sim.now
        peer = self.peer.peer
        if self._fd_first():
            self.sim.schedule(now + p.sifs_us, "TxStart", self._fd_first_send)
            self.fd_timer = self.sim.schedule(now + 2 * (p.sifs_us + self.air.ack_max) + p.slot_us,
                                              "AckTimeout", self._fd_first_timeout)
        else:
            self.sim.schedule(now + 2 * p.sifs_us + self.air.ack_max, "TxStart", self._fd_second_ack)

    def _fd_first_send(self) -> None:
        # The peer's DATA may end in the same microsecond as DURFD, so the
        # decision waits until SIFS later.
        if self.state == FD_DATA and self.peer_data_ok:
            self._send_ack(self.peer.peer, self._fd_first_ack, None)

    def _fd_first_ack(self) -> Frame:
        peer = self.peer
        skip = 1 if self.outstanding is not None else 0
        hol_pkt = self._next_for(peer.peer, skip)
        hol = hol_pkt is not None
        durnxt = self.air.data(hol_pkt.remaining, True) if hol else 0
        srb = draw_backoff(self.cw, self.rng) if hol else 0
        self.fd_sent_hol, self.fd_sent_srb = hol, srb
        peer.my_durnxt_us, peer.my_pending_srb = durnxt, srb
        return self._ack_frame(peer.peer, hol, durnxt, srb)

    def _fd_first_timeout(self) -> None:
        self.fd_timer = None
        if self.state != FD_DATA:
            return
        out = self.outstanding
        if out is not None:
            self.outstanding = None
            self._data_failure(out)
        self._purge("my_ack_fail" if self.peer_data_ok else "data_fail")

    def _fd_second_ack(self) -> None:
        if self.state != FD_DATA:
            return
        out = self.outstanding
        if out is not None:
            self.outstanding = None
            self._data_failure(out)
        peer = self.peer
        if not self.peer_data_ok:
            self._purge("data_fail")
            return
        # Virtual contention only after a fully acknowledged exchange. Even
        # without our ACK we still advertise HOL and SRB so that the peer,
        # if it hears us, keeps the shared backoff while we purge.
        if self.fd_my_acked:
            self.buffer.reorder(peer.peer, self.rng)
        hol_pkt = self._next_for(peer.peer, 0)
        hol = hol_pkt is not None
        durnxt = self.air.data(hol_pkt.remaining, True) if hol else 0
        srb = draw_backoff(self.cw, self.rng) if hol else 0
        peer.my_durnxt_us, peer.my_pending_srb = durnxt, srb
        frame = self._ack_frame(peer.peer, hol, durnxt, srb)
        m = self.medium
        if m.own[self.idx] is not None or m.is_receiving(self.idx, self.sim.now):
            self._log("ack_suppressed", f"dst={peer.peer}")
            self._purge("ack_suppressed")
            return
        pa = self.peer_ack

        def done():
            if hol and pa is not None and pa.hol and self.peer is not None:
                self.peer.peer_durnxt_us = pa.durnxt
                self.peer.peer_srb = pa.srb
                self._start_srb(srb_resolve(srb, pa.srb))
            else:
                self._purge("my_ack_fail" if pa is None else "hol0")

        self._begin(self._tx(peer.peer, frame), done)

    def _purge(self, cause: str) -> None:
        self._log("purge", cause)
        self.peer = None
        self.srb_lost = False
        self.peer_ack = None
        self.fd_timer = self._cancel(self.fd_timer)
        self.setup_timer = self._cancel(self.setup_timer)
        self.backoff = None
        self._contend(cause)

    # -- snooping and hidden-node injection -----------------------------------
    def _snoop(self, tx: Transmission) -> None:
        f = tx.frame
        ap = self.ap
        p = self.p
        sn = self.snoop
        if f.mac.kind == Kind.ACK:
            if tx.dst == ap:
                sn.observe_ack(tx.src)
            return
        if tx.src != ap:
            return
        d = tx.dst
        if self.medium.own[self.idx] is None:
            wait = p.sifs_us + self.air.ack_max
            sn.observe_data(ap, d, tx.end_us, wait, f.fd, f.mac.dur)
            self.sim.schedule(tx.end_us + wait, "SnoopTimer", sn.expire, d, tx.end_us + wait)
        if f.fd.dupmode == DupMode.FD:
            until = tx.start_us + f.fd.durfd + 2 * (p.sifs_us + self.air.ack_max)
            if until > self.nav_until:
                self.nav_until = until
            return
        if sn.belief(d) != Belief.HIDDEN or not f.fd.hol:
            return
        head = self.buffer.head()
        if head is None or head.dst != ap or self.state not in _SNOOP_READY:
            return
        now = self.sim.now
        self.hold_until = max(self.hold_until, tx.end_us + 2 * (p.sifs_us + self.air.ack_max)
                              + p.difs_us + (p.cw_min + 1) * p.slot_us)
        if self.medium.own[self.idx] is not None or self.medium.is_receiving(self.idx, now):
            return
        self.sim.metrics.opportunity(tx.tx_id)
        prob = p.snoop_prob if p.snoop_prob is not None else snoop_tx_probability(self.cw + 1, p.beta)
        if prob < 1.0 and self.rng.random() >= prob:
            if self.state == CONTEND:
                self._contend("snoop_hold")
            return
        plan = plan_injection(f.fd.dupmode, tx.start_us, f.fd.durfd, now, tx.end_us, head.remaining,
                              self.air.timing, p.sifs_us, self.air.ack_max)
        if plan.action != "send":
            return
        self._inject(tx, head, plan)

    def _inject(self, parent: Transmission, pkt: Packet, plan: InjectionPlan) -> None:
        p = self.p
        self.timer = self._cancel(self.timer)
        self.hold_timer = self._cancel(self.hold_timer)
        self.backoff = None
        hol_pkt = self._next_for(self.ap, 1) if not plan.frag else None
        nbytes = plan.payload_bytes
        final = not plan.frag
        end = self.sim.now + self.air.data(nbytes, False)
        dur = parent.end_us - end + 2 * (p.sifs_us + self.air.ack_max)
        frame = self._data_frame(self.ap, nbytes, DupMode.HD, hol_pkt, dur, frag=plan.frag)
        tx = self._tx(self.ap, frame, meta=(pkt.pid, pkt.offset, nbytes, final), injected=True,
                      parent_id=parent.tx_id)
        self.outstanding = Outstanding(tx, pkt, nbytes, self.ap, False, injected=True)
        self._inj_parent_end = parent.end_us
        self.set_state(INJECT, "hidden_fd")
        self.sim.metrics.injections += 1
        self._log("inject", f"parent={parent.tx_id} bytes={nbytes} frag={int(plan.frag)}")
        self._begin(tx)
