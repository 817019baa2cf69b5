"""Drifting node clocks and the piggybacked offset correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phy import DEFAULT_PHY, LoraPhyParams, lora_airtime


@dataclass
class DriftingClock:
    """local(t) = t + offset + (drift - rate_adjust) * 1e-6 * (t - base), all in ms."""

    base: float = 0.0
    offset: float = 0.0
    drift_ppm: float = 0.0
    rate_adjust_ppm: float = 0.0
    last_sync: float | None = None

    def __post_init__(self) -> None:
        if abs(self.drift_ppm) > 100:
            raise ValueError("|drift_ppm| must be <= 100")

    @property
    def rate(self) -> float:
        return (self.drift_ppm - self.rate_adjust_ppm) * 1e-6

    def local_time(self, t: float) -> float:
        return t + self.offset + self.rate * (t - self.base)

    def error(self, t: float) -> float:
        return self.local_time(t) - t

    def true_time(self, local: float) -> float:
        """Inverse of ``local_time``."""
        return self.base + (local - self.base - self.offset) / (1.0 + self.rate)


def apply_offset(clock: DriftingClock, delta: float, now: float) -> DriftingClock:
    """Step correction t <- t + delta at true time ``now``; drift is untouched."""
    clock.offset = clock.error(now) + delta
    clock.base = now
    return clock


def apply_rate_feedback(clock: DriftingClock, delta: float, now: float, gain: float) -> None:
    """Proportional rate trim from the offset seen since the previous sync."""
    if clock.last_sync is not None and now > clock.last_sync:
        observed_ppm = -delta / (now - clock.last_sync) * 1e6
        clock.rate_adjust_ppm += gain * observed_ppm
    clock.last_sync = now


def estimate_offset(t0: float, t1_prime: float, delta: float) -> float:
    """Clock offset of the node relative to the controller, in ms."""
    return t1_prime - (t0 + delta)


class LatencyTable:
    """Uplink latency (time-on-air) per (SF, frame size), shared by PHY and controller."""

    def __init__(self, params: LoraPhyParams = DEFAULT_PHY):
        self.params = params
        self._cache: dict[tuple[int, int], float] = {}

    def delta(self, sf: int, payload_bytes: int) -> float:
        key = (sf, payload_bytes)
        v = self._cache.get(key)
        if v is None:
            v = self._cache[key] = lora_airtime(sf, payload_bytes, self.params)
        return v

    __call__ = delta


def timestamp_noise(rng: np.random.Generator, sigma_ms: float, truncation: float) -> float:
    """Zero-mean Gaussian noise truncated at +-truncation * sigma (resampled)."""
    if sigma_ms <= 0:
        return 0.0
    while True:
        x = rng.standard_normal()
        if abs(x) <= truncation:
            return float(sigma_ms * x)
