"""Physical-layer link models.

All internal quantities are SI (metres, watts, hertz, seconds); distances
enter in km and are converted before evaluating a budget.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

SPEED_OF_LIGHT = 3.0e8  # m/s
LN2 = math.log(2.0)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def noise_power_w(psd_dbm_hz: float, bandwidth_hz: float) -> float:
    return 10.0 ** ((psd_dbm_hz - 30.0) / 10.0) * bandwidth_hz


@dataclass(frozen=True)
class LinkBudget:
    tx_power_w: float
    tx_gain: float  # linear
    rx_gain: float  # linear
    distance_km: float
    path_loss_exponent: float
    noise_power_w: float
    carrier_hz: float
    bandwidth_hz: float
    ground_terminal_power_w: float = 10.0

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def unit_path_loss(self) -> float:
        return 4 * math.pi / self.wavelength_m

    def check(self):
        for name in ("tx_power_w", "tx_gain", "rx_gain", "distance_km", "path_loss_exponent",
                     "noise_power_w", "carrier_hz", "bandwidth_hz", "ground_terminal_power_w"):
            v = getattr(self, name)
            if not v > 0:
                raise DomainError(f"{name} must be positive, got {v}")
        return self


@dataclass(frozen=True)
class RadioConfig:
    """Table-level radio parameters from which per-link budgets are built."""

    satellite_power_w: float = 20.0
    terminal_power_w: float = 10.0
    antenna_gain_db: float = 60.0
    path_loss_exponent: float = 2.0
    noise_psd_dbm_hz: float = -174.0
    carrier_hz: float = 30e9
    bandwidth_hz: float = 500e6
    packet_bits: float = 64e3
    nakagami_m: float = 2.0
    isl_fading: bool = False

    @property
    def noise_power_w(self) -> float:
        return noise_power_w(self.noise_psd_dbm_hz, self.bandwidth_hz)

    @property
    def gain(self) -> float:
        return float(db_to_linear(self.antenna_gain_db))

    def budget(self, distance_km: float) -> LinkBudget:
        return LinkBudget(
            self.satellite_power_w, self.gain, self.gain, distance_km, self.path_loss_exponent,
            self.noise_power_w, self.carrier_hz, self.bandwidth_hz, self.terminal_power_w,
        )


def _isl_snr(p, d_km, h2, gi, gj, alpha, q, sigma2):
    d_m = np.asarray(d_km, dtype=float) * 1e3
    return p * d_m ** (-alpha) * h2 * gi * gj / (q * sigma2)


def isl_snr(budget: LinkBudget, channel_gain: float = 1.0) -> float:
    """Linear ISL SNR for the given |h|^2."""
    budget.check()
    if channel_gain < 0:
        raise DomainError("channel gain must be nonnegative")
    return float(_isl_snr(budget.tx_power_w, budget.distance_km, channel_gain, budget.tx_gain,
                          budget.rx_gain, budget.path_loss_exponent, budget.unit_path_loss,
                          budget.noise_power_w))


def isl_snr_array(distances_km, radio: RadioConfig, channel_gain=1.0) -> np.ndarray:
    b = radio.budget(1.0)
    return _isl_snr(b.tx_power_w, distances_km, channel_gain, b.tx_gain, b.rx_gain,
                    b.path_loss_exponent, b.unit_path_loss, b.noise_power_w)


def rate_from_snr(snr, bandwidth_hz):
    """Shannon rate W*log2(1+snr) in bit/s."""
    if np.any(np.asarray(snr) < 0):
        raise DomainError("snr must be nonnegative")
    out = bandwidth_hz * np.log1p(snr) / LN2
    return float(out) if np.ndim(out) == 0 else out


def snr_from_rate(rate, bandwidth_hz):
    out = np.expm1(np.asarray(rate, dtype=float) / bandwidth_hz * LN2)
    return float(out) if np.ndim(out) == 0 else out


def ground_snr(budget: LinkBudget, direction: str, fading_draw: float = 1.0) -> float:
    """Up/downlink SNR: the terminal transmits on the uplink, the satellite on the downlink."""
    budget.check()
    if fading_draw < 0:
        raise DomainError("fading draw must be nonnegative")
    if direction == "uplink":
        p = budget.ground_terminal_power_w
    elif direction == "downlink":
        p = budget.tx_power_w
    else:
        raise DomainError(f"direction must be 'uplink' or 'downlink', got {direction!r}")
    return p * budget.tx_gain * budget.rx_gain * fading_draw / budget.noise_power_w


def nakagami_power(m: float, size, rng: np.random.Generator) -> np.ndarray:
    """Draws of |g|^2 for Nakagami-m amplitude with unit mean power (Gamma(m, 1/m))."""
    if m < 0.5:
        raise DomainError("Nakagami m must be >= 0.5")
    return rng.gamma(shape=m, scale=1.0 / m, size=size)


@dataclass(frozen=True)
class FadingModel:
    nakagami_m: float = 2.0
    mean_power: float = 1.0

    def __post_init__(self):
        if self.nakagami_m < 0.5:
            raise DomainError("Nakagami m must be >= 0.5")
        if self.mean_power != 1.0:
            raise DomainError("fading power is normalised to unit mean")


@dataclass(frozen=True)
class HopLatency:
    propagation: float
    transmission: float
    queueing: float
    stalled: bool = False

    @property
    def total(self) -> float:
        return self.propagation + self.transmission + self.queueing


def propagation_delay(distance_km):
    return np.asarray(distance_km) * 1e3 / SPEED_OF_LIGHT


def hop_latency(distance_km: float, rate: float, queue_backlog_bits: float = 0.0,
                packet_bits: float = 64e3) -> HopLatency:
    prop = float(propagation_delay(distance_km))
    if rate <= 0:
        return HopLatency(prop, math.inf, math.inf if queue_backlog_bits > 0 else 0.0, stalled=True)
    return HopLatency(prop, packet_bits / rate, queue_backlog_bits / rate)

