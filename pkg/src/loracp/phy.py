"""Analytical radio models: LoRa airtime/energy/loss and the data-plane ETX process."""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import MAX_SF, MIN_SF


@dataclass(frozen=True)
class LoraPhyParams:
    bandwidth: int = 125000
    coding_rate: int = 1  # 1..4 for 4/5..4/8
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc_on: bool = True
    low_dr_optimize: bool | None = None  # None: on for SF11/12 at 125 kHz

    def __post_init__(self) -> None:
        if self.bandwidth not in (125000, 250000, 500000):
            raise ValueError("bandwidth must be 125, 250 or 500 kHz")
        if self.preamble_symbols < 6:
            raise ValueError("preamble_symbols must be >= 6")
        if not 1 <= self.coding_rate <= 4:
            raise ValueError("coding_rate must be 1..4")


DEFAULT_PHY = LoraPhyParams()


def symbol_time_ms(sf: int, params: LoraPhyParams = DEFAULT_PHY) -> float:
    return (2**sf) / params.bandwidth * 1000.0


def payload_symbols(sf: int, payload_bytes: int, params: LoraPhyParams = DEFAULT_PHY) -> int:
    de = params.low_dr_optimize
    if de is None:
        de = sf >= 11 and params.bandwidth == 125000
    ih = 0 if params.explicit_header else 1
    crc = 1 if params.crc_on else 0
    num = 8 * payload_bytes - 4 * sf + 28 + 16 * crc - 20 * ih
    den = 4 * (sf - 2 * int(de))
    return 8 + max(math.ceil(num / den) * (params.coding_rate + 4), 0)


def lora_airtime(sf: int, payload_bytes: int, params: LoraPhyParams = DEFAULT_PHY) -> float:
    """Time on air in ms (SX127x symbol-count formula)."""
    if not MIN_SF <= sf <= MAX_SF:
        raise ValueError(f"sf {sf} outside [{MIN_SF}, {MAX_SF}]")
    if not 0 <= payload_bytes <= 255:
        raise ValueError("payload_bytes must be within [0, 255]")
    t_sym = symbol_time_ms(sf, params)
    preamble = (params.preamble_symbols + 4.25) * t_sym
    return preamble + payload_symbols(sf, payload_bytes, params) * t_sym


def lora_bitrate(sf: int, params: LoraPhyParams = DEFAULT_PHY) -> float:
    """Nominal LoRa bit rate in bps."""
    return sf * (4.0 / (4 + params.coding_rate)) * params.bandwidth / (2**sf)


# --------------------------------------------------------------------------
# energy


class RadioMode(str, enum.Enum):
    TX = "TX"
    RX = "RX"
    SLEEP = "SLEEP"


@dataclass(frozen=True)
class CurrentProfile:
    tx_current: float = 39.5  # mA
    rx_current: float = 14.2
    sleep_current: float = 0.0016
    supply_voltage: float = 3.3

    def __post_init__(self) -> None:
        if min(self.tx_current, self.rx_current, self.sleep_current, self.supply_voltage) <= 0:
            raise ValueError("currents and voltage must be strictly positive")
        if not self.tx_current > self.rx_current > self.sleep_current:
            raise ValueError("need tx > rx > sleep current")

    def current(self, mode: RadioMode | str) -> float:
        mode = RadioMode(mode)
        if mode is RadioMode.TX:
            return self.tx_current
        if mode is RadioMode.RX:
            return self.rx_current
        return self.sleep_current


def radio_energy(activity_log, profile: CurrentProfile = CurrentProfile()) -> float:
    """Energy in mJ of a list of ``(mode, duration_ms)`` entries."""
    total = 0.0
    for mode, duration in activity_log:
        if duration < 0:
            raise ValueError("durations must be non-negative")
        # mA * V = mW; mW * ms / 1000 = mJ
        total += profile.current(mode) * profile.supply_voltage * duration / 1000.0
    return total


@dataclass(frozen=True)
class RadioSpec:
    p_tx: float  # mW
    p_rx: float
    rate_bps: float
    hop_range_m: float


def multihop_energy_ratio(radio_a: RadioSpec, radio_b: RadioSpec, distance_m: float) -> float:
    """Ratio of the energy two radios spend moving the same bits over ``distance_m``.

    Per hop a radio spends ``(P_tx + P_rx) * x / v``; a route needs
    ``ceil(L / d)`` hops (at least one).  The bit count ``x`` cancels.
    """
    for r in (radio_a, radio_b):
        if min(r.p_tx, r.p_rx, r.rate_bps, r.hop_range_m) <= 0:
            raise ValueError("powers, rates and ranges must be positive")
    if distance_m <= 0:
        raise ValueError("distance must be positive")

    def per_bit(r: RadioSpec) -> float:
        hops = max(1, math.ceil(distance_m / r.hop_range_m - 1e-9))
        return (r.p_tx + r.p_rx) / r.rate_bps * hops

    return per_bit(radio_a) / per_bit(radio_b)


# --------------------------------------------------------------------------
# LoRa frame loss


def _default_loss_table() -> dict[int, list[tuple[float, float]]]:
    # 0.98 up to 200 m everywhere; SF12 falls linearly to 0.80 at 2.5 km and lower
    # SFs fall faster (sqrt(2) per SF step in slope).
    slope12 = (0.98 - 0.80) / (2500.0 - 200.0)
    table = {}
    for sf in range(MIN_SF, MAX_SF + 1):
        slope = slope12 * 2 ** ((MAX_SF - sf) / 2)
        pts = [(0.0, 0.98), (200.0, 0.98)]
        for d in (500.0, 1000.0, 1500.0, 2000.0, 2500.0):
            pts.append((d, max(0.0, 0.98 - slope * (d - 200.0))))
        table[sf] = pts
    return table


@dataclass
class LoraLossModel:
    table: dict[int, list[tuple[float, float]]] = field(default_factory=_default_loss_table)

    def __post_init__(self) -> None:
        for sf, pts in self.table.items():
            if not pts:
                raise ValueError(f"SF{sf}: empty breakpoint list")
            ds = [d for d, _ in pts]
            if ds != sorted(ds) or len(set(ds)) != len(ds):
                raise ValueError(f"SF{sf}: distances must be strictly increasing")
            for d, p in pts:
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"SF{sf}: probability {p} outside [0, 1]")
            ps = [p for _, p in pts]
            if any(b > a + 1e-12 for a, b in zip(ps, ps[1:])):
                raise ValueError(f"SF{sf}: reception must not increase with distance")
        sfs = sorted(self.table)
        grid = sorted({d for pts in self.table.values() for d, _ in pts})
        for lo, hi in zip(sfs, sfs[1:]):
            for d in grid:
                if d > min(self.coverage(lo), self.coverage(hi)):
                    break
                if self.probability(d, lo) > self.probability(d, hi) + 1e-12:
                    raise ValueError(f"reception at {d} m must not decrease from SF{lo} to SF{hi}")

    @classmethod
    def from_config(cls, raw: dict[str, list[tuple[float, float]]] | None) -> "LoraLossModel":
        if raw is None:
            return cls()
        table = {}
        for key, pts in raw.items():
            sf = int(str(key).upper().removeprefix("SF"))
            if not MIN_SF <= sf <= MAX_SF:
                raise ValueError(f"invalid SF key {key!r}")
            table[sf] = [(float(d), float(p)) for d, p in pts]
        return cls(table)

    def coverage(self, sf: int) -> float:
        return self.table[sf][-1][0]

    def probability(self, distance_m: float, sf: int) -> float:
        if sf not in self.table:
            raise ValueError(f"loss model has no entry for SF{sf}")
        pts = self.table[sf]
        if distance_m < 0 or distance_m > pts[-1][0] + 1e-9:
            raise ValueError(f"distance {distance_m:.1f} m outside SF{sf} coverage")
        ds = [d for d, _ in pts]
        k = bisect.bisect_right(ds, distance_m)
        if k == 0:
            return pts[0][1]
        if k >= len(pts):
            return pts[-1][1]
        (d0, p0), (d1, p1) = pts[k - 1], pts[k]
        return p0 + (p1 - p0) * (distance_m - d0) / (d1 - d0)


def lora_delivery(distance_m: float, sf: int, model: LoraLossModel, rng: np.random.Generator) -> bool:
    p = model.probability(distance_m, sf)
    return bool(rng.random() < p)


# --------------------------------------------------------------------------
# data-plane links


@dataclass
class LinkState:
    endpoints: tuple[int, int]
    base_gain: float  # dB (received power at 0 dBm transmit)
    noise_floor: float = -90.0
    current_etx: float = 1.0
    last_update: int = 0
    coupling: float = 1.0  # share of the interference felt by this link
    fluctuation_db: float = 0.0

    def __post_init__(self) -> None:
        if self.current_etx < 1.0:
            raise ValueError("ETX must be >= 1")
        a, b = self.endpoints
        if a > b:
            self.endpoints = (b, a)


@dataclass(frozen=True)
class EtxModel:
    """Parameters of the SNR -> PRR -> ETX mapping and its fluctuation."""

    tx_power_dbm: float = 0.0
    snr50_db: float = 4.0
    snr_width_db: float = 1.5
    interference_k_db: float = 0.1
    fluct_base_sd_db: float = 0.5
    fluct_per_unit_db: float = 0.04
    fluct_tau_s: float = 30.0
    etx_max: float = 20.0


def interference_sigma(setpoint: float) -> float:
    """Jitter s.d. of the interference intensity around a setpoint.

    Linear through (5, 0.8) and (90, 20); proportional below 5.
    """
    if setpoint <= 0:
        return 0.0
    if setpoint < 5.0:
        return 0.8 * setpoint / 5.0
    return 0.8 + (setpoint - 5.0) * (20.0 - 0.8) / 85.0


def fluctuation_sd(intensity, model: EtxModel):
    return model.fluct_base_sd_db + model.fluct_per_unit_db * np.maximum(intensity, 0.0)


def prr_from_snr(snr_db, model: EtxModel):
    return 1.0 / (1.0 + np.exp(-(snr_db - model.snr50_db) / model.snr_width_db))


def etx_from_prr(prr, etx_max: float):
    prr = np.maximum(prr, 1e-12)
    return np.clip(1.0 / (prr * prr), 1.0, etx_max)


def link_snr(base_gain, noise_floor, coupling, fluctuation_db, intensity, model: EtxModel):
    return (
        model.tx_power_dbm
        + base_gain
        - noise_floor
        - model.interference_k_db * coupling * intensity
        + fluctuation_db
    )


def ou_step(x, sd, dt_s: float, tau_s: float, noise):
    """Exact Ornstein-Uhlenbeck update towards 0 with stationary s.d. ``sd``."""
    a = math.exp(-dt_s / tau_s)
    return a * x + sd * math.sqrt(1.0 - a * a) * noise


def dataplane_etx(
    link: LinkState,
    interference_intensity: float,
    rng: np.random.Generator,
    model: EtxModel = EtxModel(),
    dt_s: float = 10.0,
    now: int | None = None,
) -> float:
    """Advance one link's fluctuation by ``dt_s`` and return its new ETX."""
    sd = float(fluctuation_sd(interference_intensity, model))
    link.fluctuation_db = float(ou_step(link.fluctuation_db, sd, dt_s, model.fluct_tau_s, rng.standard_normal()))
    snr = link_snr(link.base_gain, link.noise_floor, link.coupling, link.fluctuation_db, interference_intensity, model)
    link.current_etx = float(etx_from_prr(prr_from_snr(snr, model), model.etx_max))
    if now is not None:
        link.last_update = now
    return link.current_etx


class LinkField:
    """Vectorised set of data-plane links sharing one interference process."""

    def __init__(self, links: list[LinkState], model: EtxModel):
        self.links = links
        self.model = model
        self.index = {l.endpoints: k for k, l in enumerate(links)}
        self.base_gain = np.array([l.base_gain for l in links], dtype=float)
        self.noise = np.array([l.noise_floor for l in links], dtype=float)
        self.coupling = np.array([l.coupling for l in links], dtype=float)
        self.fluct = np.array([l.fluctuation_db for l in links], dtype=float)
        self.etx = np.array([l.current_etx for l in links], dtype=float)

    def step(self, intensity: float, rng: np.random.Generator, dt_s: float) -> None:
        if not self.links:
            return
        sd = fluctuation_sd(intensity, self.model)
        self.fluct = ou_step(self.fluct, sd, dt_s, self.model.fluct_tau_s, rng.standard_normal(len(self.links)))
        snr = link_snr(self.base_gain, self.noise, self.coupling, self.fluct, intensity, self.model)
        self.etx = etx_from_prr(prr_from_snr(snr, self.model), self.model.etx_max)

    def etx_of(self, a: int, b: int) -> float | None:
        k = self.index.get((a, b) if a < b else (b, a))
        return None if k is None else float(self.etx[k])


def log_distance_gain(distance_m: float, pl_d0_db: float, exponent: float) -> float:
    d = max(distance_m, 1.0)
    return -(pl_d0_db + 10.0 * exponent * math.log10(d))
