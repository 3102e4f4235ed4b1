"""Full-duplex PHY abstraction.

Per-subcarrier analog cancellation, the measured suppression presets and
SINR->BER anchors, and the asynchronous full-duplex rules a MAC must obey.
Nothing here simulates waveforms; links are described by their SINR.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class ZeroEstimate(ValueError):
    """A cancellation-path estimate is zero, so the canceler is undefined."""


class Estimation(enum.Enum):
    CLEAN = "clean"
    DIRTY = "dirty"


class NodeState(enum.Enum):
    IDLE = "idle"
    TRANSMITTING = "transmitting"
    RECEIVING = "receiving"


class Action(enum.Enum):
    START_TX = "start_tx"
    START_RX = "start_rx"


@dataclass(frozen=True)
class Allowed:
    mode: Estimation


FORBIDDEN = None


# -- cancellation -----------------------------------------------------------

@dataclass
class SubcarrierChannels:
    """Self-interference and cancellation-path gains with their estimates."""

    h: np.ndarray
    h_c: np.ndarray
    h_hat: np.ndarray
    h_hat_c: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.complex128) for a in (self.h, self.h_c, self.h_hat, self.h_hat_c)]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("all channel arrays must be 1-D with the same length")
        self.h, self.h_c, self.h_hat, self.h_hat_c = arrays

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @classmethod
    def perfect(cls, h, h_c) -> "SubcarrierChannels":
        return cls(h, h_c, np.array(h, copy=True), np.array(h_c, copy=True))


def canceling_signal(ch: SubcarrierChannels, x) -> np.ndarray:
    """x_c[k] = -(h_hat[k] / h_hat_c[k]) * x[k]."""
    if np.any(ch.h_hat_c == 0):
        raise ZeroEstimate("h_hat_c has a zero entry")
    x = np.asarray(x, dtype=np.complex128)
    return -(ch.h_hat / ch.h_hat_c) * x


def residual_self_interference(ch: SubcarrierChannels, x) -> np.ndarray:
    """Self-interference left at the receive antenna after analog cancellation."""
    x = np.asarray(x, dtype=np.complex128)
    return ch.h * x + ch.h_c * canceling_signal(ch, x)


def cancellation_trials(draws: int, k: int, rel_error: float, rng: np.random.Generator):
    """Random channels with h_hat = h * (1 + rel_error * e^{j phi}) and exact h_hat_c.

    Returns per-draw (max residual power, mean SI power, max residual/SI
    ratio over subcarriers), computed by the accelerated kernel.
    """
    from .kernels import residual_stats

    shape = (draws, k)

    def cn():
        return rng.normal(size=shape) + 1j * rng.normal(size=shape)

    h, h_c, x = cn(), cn(), cn()
    err = rel_error * np.exp(2j * np.pi * rng.random(shape))
    return residual_stats(h, h_c, h * (1 + err), h_c.copy(), x)


# -- tables -----------------------------------------------------------------

@dataclass(frozen=True)
class SuppressionPreset:
    name: str
    device_present: bool
    interference_dbm: float
    after_analog_dbm: float
    total_suppression_db: float


@dataclass(frozen=True)
class BerRow:
    sinr_db: float
    ber_dirty: float
    ber_clean: float


@dataclass(frozen=True)
class PhyTables:
    version: int
    tx_power_dbm: float
    presets: tuple[SuppressionPreset, ...]
    ber_rows: tuple[BerRow, ...]

    def __post_init__(self):
        sinrs = [r.sinr_db for r in self.ber_rows]
        if sinrs != sorted(sinrs, reverse=True) or len(set(sinrs)) != len(sinrs):
            raise ValueError("BER anchor rows must be sorted by sinr_db, descending")
        for r in self.ber_rows:
            if not (0.0 <= r.ber_clean <= 1.0 and 0.0 <= r.ber_dirty <= 1.0):
                raise ValueError(f"BER outside [0, 1] in row {r}")
        for p in self.presets:
            if p.total_suppression_db != self.tx_power_dbm - p.after_analog_dbm:
                raise ValueError(f"preset {p.name}/{p.device_present}: suppression "
                                 "must equal tx power minus post-cancellation power")


def load_tables(path: str | Path | None = None) -> PhyTables:
    """Load the preset/BER tables; ``path`` overrides the shipped data file."""
    if path is None:
        text = resources.files("fdmac.data").joinpath("phy_tables.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    return PhyTables(
        version=int(raw["version"]),
        tx_power_dbm=raw["tx_power_dbm"],
        presets=tuple(SuppressionPreset(**p) for p in raw["suppression_presets"]),
        ber_rows=tuple(BerRow(**r) for r in raw["ber_table"]["rows"]),
    )


DEFAULT_TABLES = load_tables()


def preset_lookup(name: str, device_present: bool, tables: PhyTables = DEFAULT_TABLES) -> SuppressionPreset:
    for p in tables.presets:
        if p.name == name and p.device_present == bool(device_present):
            return p
    raise KeyError(f"no suppression preset {name!r} device_present={device_present}")


def sinr_to_ber(sinr_db: float, estimation: Estimation, tables: PhyTables = DEFAULT_TABLES) -> float:
    """Bit error rate from the measured anchors.

    Anchors are returned exactly. Between anchors log10(BER) is interpolated
    linearly in SINR. Outside the anchor span the nearest anchor is used,
    except that a zero anchor (clean estimation at the top SINR) stays zero
    at and above it. A segment ending in a zero anchor has no log-space
    endpoint; it continues from its finite anchor with the dirty curve's
    log-slope on that segment and drops to zero at the anchor.
    """
    if not math.isfinite(sinr_db):
        raise ValueError("sinr_db must be finite")
    rows = tables.ber_rows
    dirty = estimation == Estimation.DIRTY

    def ber(row: BerRow) -> float:
        return row.ber_dirty if dirty else row.ber_clean

    if sinr_db >= rows[0].sinr_db:
        return ber(rows[0])
    if sinr_db <= rows[-1].sinr_db:
        return ber(rows[-1])
    for hi, lo in zip(rows, rows[1:]):
        if lo.sinr_db <= sinr_db < hi.sinr_db:
            break
    if sinr_db == lo.sinr_db:
        return ber(lo)
    frac = (sinr_db - lo.sinr_db) / (hi.sinr_db - lo.sinr_db)
    b_lo, b_hi = ber(lo), ber(hi)
    if b_lo == 0.0:
        return 0.0
    if b_hi == 0.0:
        slope = math.log10(hi.ber_dirty) - math.log10(lo.ber_dirty)
        return 10.0 ** (math.log10(b_lo) + frac * slope)
    return 10.0 ** (math.log10(b_lo) + frac * (math.log10(b_hi) - math.log10(b_lo)))


def frame_success_prob(ber: float, payload_bytes: int) -> float:
    """Probability that every payload bit survives i.i.d. bit errors."""
    if not 0.0 <= ber <= 1.0:
        raise ValueError("ber must lie in [0, 1]")
    if payload_bytes <= 0 or ber == 0.0:
        return 1.0
    if ber == 1.0:
        return 0.0
    return math.exp(8 * payload_bytes * math.log1p(-ber))


def allowed_async(node_state: NodeState, action: Action) -> Allowed | None:
    """Which asynchronous full-duplex starts the PHY supports.

    A node may begin a reception while transmitting (with dirty channel
    estimation) but may never begin a transmission while receiving.
    Returns ``Allowed(mode)`` or ``FORBIDDEN`` (None).
    """
    if node_state == NodeState.IDLE:
        return Allowed(Estimation.CLEAN)
    if node_state == NodeState.TRANSMITTING:
        return Allowed(Estimation.DIRTY) if action == Action.START_RX else FORBIDDEN
    if node_state == NodeState.RECEIVING:
        return FORBIDDEN if action == Action.START_TX else Allowed(Estimation.CLEAN)
    raise ValueError(node_state)


# -- link model -------------------------------------------------------------

def _db_sum(*dbm: float) -> float:
    return 10.0 * math.log10(sum(10.0 ** (v / 10.0) for v in dbm))


@dataclass
class LinkModel:
    """Per-directed-link SNR plus the self-interference residual of a preset."""

    snr_db: float = 40.0
    link_snr_db: dict[tuple[int, int], float] = field(default_factory=dict)
    preset: SuppressionPreset = field(default_factory=lambda: preset_lookup("B", True))
    tx_power_dbm: float = 6.0
    noise_floor_dbm: float = -95.0
    dirty_penalty_db: float = 3.0
    tables: PhyTables = DEFAULT_TABLES

    def link_snr(self, src: int, dst: int) -> float:
        return self.link_snr_db.get((src, dst), self.snr_db)

    @property
    def residual_si_dbm(self) -> float:
        return self.tx_power_dbm - self.preset.total_suppression_db

    def effective_sinr_db(self, src: int, dst: int, self_interference: bool,
                          estimation: Estimation = Estimation.CLEAN) -> float:
        snr = self.link_snr(src, dst)
        if self_interference:
            signal = self.noise_floor_dbm + snr
            sinr = signal - _db_sum(self.noise_floor_dbm, self.residual_si_dbm)
        else:
            sinr = snr
        if estimation == Estimation.DIRTY:
            sinr -= self.dirty_penalty_db
        return sinr

    def success_prob(self, src: int, dst: int, payload_bytes: int, self_interference: bool,
                     estimation: Estimation = Estimation.CLEAN) -> float:
        sinr = self.effective_sinr_db(src, dst, self_interference, estimation)
        return frame_success_prob(sinr_to_ber(sinr, estimation, self.tables), payload_bytes)
