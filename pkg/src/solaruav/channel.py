"""Probabilistic LoS air-to-ground channel: gains, SNR test, offload-rate test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelParams:
    """Air-to-ground channel constants (all linear scale)."""

    beta: float = 11.95              # LoS sigmoid offset
    beta_prime: float = 0.14         # LoS sigmoid slope (per degree)
    beta0: float = 1e-6              # power gain at 1 m (-60 dB)
    kappa: float = 0.2               # extra NLoS attenuation, < 1
    path_loss_exp: float = 2.3
    noise_power: float = 1e-13       # watts (-100 dBm)
    sn_tx_power: float = 0.05        # watts, sensor uplink
    uav_tx_power: float = 1.0        # watts, UAV-to-DC downlink
    bandwidth: float = 5e6           # Hz
    snr_threshold: float = 10 ** 0.2  # linear (2 dB)

    def __post_init__(self):
        vals = (self.beta, self.beta_prime, self.beta0, self.kappa, self.path_loss_exp,
                self.noise_power, self.sn_tx_power, self.uav_tx_power, self.bandwidth,
                self.snr_threshold)
        if min(vals) <= 0:
            raise ValueError("channel parameters must be strictly positive")
        if self.kappa >= 1:
            raise ValueError("kappa must be < 1 (NLoS attenuates)")


@dataclass(frozen=True)
class ChannelDraw:
    """One slot's channel realization for a single link."""

    is_los: bool
    small_scale_power: float  # unit-mean fading power
    gain: float               # total linear power gain

    def __post_init__(self):
        if self.small_scale_power < 0 or self.gain < 0:
            raise ValueError("channel powers cannot be negative")


def los_probability(d: float, altitude: float, p: ChannelParams) -> float:
    """Elevation-angle sigmoid probability that the link is line-of-sight."""
    if altitude <= 0:
        raise ValueError("altitude must be positive for an air-to-ground link")
    if d < altitude:
        raise ValueError("slant distance cannot be below the altitude")
    elevation_deg = math.degrees(math.asin(altitude / d))
    return 1.0 / (1.0 + p.beta * math.exp(-p.beta_prime * (elevation_deg - p.beta)))


def sample_gain(d: float, altitude: float, p: ChannelParams,
                rng: np.random.Generator) -> ChannelDraw:
    """Draw one slot's link gain: LoS/NLoS branch times unit-mean Rayleigh power."""
    p_los = los_probability(d, altitude, p)
    is_los = bool(rng.random() < p_los)
    large_scale = p.beta0 * d ** (-p.path_loss_exp)
    if not is_los:
        large_scale *= p.kappa
    small = float(rng.exponential(1.0))
    return ChannelDraw(is_los=is_los, small_scale_power=small, gain=large_scale * small)


def upload_succeeds(draw: ChannelDraw, p: ChannelParams) -> bool:
    """Sensor upload succeeds iff its received SNR meets the threshold."""
    return p.sn_tx_power * draw.gain / p.noise_power >= p.snr_threshold


def offload_succeeds(draw: ChannelDraw, buffer_bits: float, window: float,
                     p: ChannelParams) -> bool:
    """Offload succeeds iff the buffer drains within the window at Shannon rate."""
    if window <= 0:
        raise ValueError("offload window must be positive")
    if buffer_bits < 0:
        raise ValueError("buffer size cannot be negative")
    if buffer_bits == 0:
        return True
    rate = p.bandwidth * math.log2(1.0 + p.uav_tx_power * draw.gain / p.noise_power)
    if rate <= 0.0:
        return False
    return buffer_bits / rate <= window
