"""Packet arrivals and the three per-sensor lifetime/age recursions.

Lifetimes are slot counts stored as floats; NaN marks "no packet".  NaN + 1
stays NaN, so the increment branches apply uniformly and emptiness survives
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

PACKET_BITS = 10240  # bits per status-update packet


@dataclass(frozen=True)
class FreshnessState:
    """Per-sensor packet ages: at the sensor, in the UAV buffer, and at the DC."""

    sn_lifetime: np.ndarray   # (N,) float; NaN = sensor buffer empty
    uav_lifetime: np.ndarray  # (N,) float; NaN = UAV holds no packet for that SN
    aoi: np.ndarray           # (N,) float, age of information at the DC

    @property
    def n_sns(self) -> int:
        return int(self.aoi.shape[0])

    def sn_has_packet(self, sn: int) -> bool:
        """True iff sensor `sn` (1-based) currently buffers a packet."""
        return not np.isnan(self.sn_lifetime[sn - 1])


def initial_freshness(n_sns: int) -> FreshnessState:
    """All buffers empty, all ages zero."""
    if n_sns < 1:
        raise ValueError("need at least one sensor node")
    nan = np.full(n_sns, np.nan)
    return FreshnessState(sn_lifetime=nan.copy(), uav_lifetime=nan.copy(),
                          aoi=np.zeros(n_sns))


def sample_arrivals(n_sns: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Per-sensor Bernoulli arrival flags for one slot."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("arrival rate must lie in [0, 1]")
    return rng.random(n_sns) < rate


def advance_sn_lifetimes(state: FreshnessState, arrivals: np.ndarray) -> FreshnessState:
    """A fresh arrival resets the sensor-side age to 0; otherwise it ages by one."""
    lifetime = state.sn_lifetime + 1.0
    lifetime[np.asarray(arrivals, dtype=bool)] = 0.0
    return replace(state, sn_lifetime=lifetime)


def advance_uav_lifetimes(state: FreshnessState, upload_sn: int | None) -> FreshnessState:
    """Move the uploaded sensor's packet into the UAV buffer; age the rest.

    `upload_sn` is the 1-based sensor whose upload succeeded this slot, or None.
    A successful upload replaces any packet already held for that sensor and
    empties the sensor's own buffer.
    """
    uav = state.uav_lifetime + 1.0
    if upload_sn is None:
        return replace(state, uav_lifetime=uav)
    i = upload_sn - 1
    if np.isnan(state.sn_lifetime[i]):
        raise ValueError(f"upload flagged for SN {upload_sn} but its buffer is empty")
    sn = state.sn_lifetime.copy()
    uav[i] = sn[i] + 1.0
    sn[i] = np.nan
    return replace(state, sn_lifetime=sn, uav_lifetime=uav)


def advance_aoi(state: FreshnessState, offload_success: bool) -> FreshnessState:
    """On a successful offload every buffered packet reaches the DC and resets
    its sensor's age; every other age grows by one."""
    aoi = state.aoi + 1.0
    if not offload_success:
        return replace(state, aoi=aoi)
    held = ~np.isnan(state.uav_lifetime)
    aoi[held] = state.uav_lifetime[held]
    uav = state.uav_lifetime.copy()
    uav[held] = np.nan
    return replace(state, uav_lifetime=uav, aoi=aoi)


def buffer_bits(state: FreshnessState, packet_bits: int = PACKET_BITS) -> int:
    """Total bits currently held in the UAV buffer."""
    return int(np.count_nonzero(~np.isnan(state.uav_lifetime))) * packet_bits
