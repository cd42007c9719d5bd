"""Rotor propulsion power, four-case slot energy, solar harvesting, battery hysteresis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WORKING = "working"
RESTORING = "restoring"


@dataclass(frozen=True)
class PowerParams:
    """Rotary-wing propulsion constants plus the communication transmit power."""

    n_rotors: int = 4
    blade_drag: float = 0.012       # local blade section drag coefficient
    thrust_coef: float = 0.302      # thrust coefficient based on disc area
    rotor_solidity: float = 0.0955
    induced_corr: float = 0.131     # incremental correction to induced power
    air_density: float = 1.293      # kg/m^3
    disc_area: float = 0.0314       # m^2 per rotor
    fuselage_drag: float = 0.834    # fuselage drag ratio per rotor
    flat_plate_area: float = 0.1    # m^2 equivalent flat plate
    mass: float = 2.0               # kg
    gravity: float = 9.8            # m/s^2
    comm_power: float = 1.0         # watts drawn while transmitting to the DC

    def __post_init__(self):
        vals = (self.n_rotors, self.blade_drag, self.thrust_coef, self.rotor_solidity,
                self.induced_corr, self.air_density, self.disc_area, self.fuselage_drag,
                self.flat_plate_area, self.mass, self.gravity, self.comm_power)
        if min(vals) <= 0:
            raise ValueError("power parameters must be strictly positive")


@dataclass(frozen=True)
class HarvestParams:
    """Bernoulli solar-arrival process and the altitude-dependent panel yield."""

    arrival_prob: float = 0.7        # chance solar energy arrives in a slot
    conversion_eff: float = 0.4
    panel_area: float = 0.14         # m^2
    ground_irradiance: float = 1367.0  # W/m^2
    transmittance_max: float = 0.8978
    extinction: float = 0.2804
    scale_height: float = 8000.0     # m

    def __post_init__(self):
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ValueError("arrival probability must lie in [0, 1]")
        if not self.transmittance_max > self.extinction > 0:
            raise ValueError("need transmittance_max > extinction > 0")


@dataclass(frozen=True)
class BatteryLimits:
    """Capacity and the two mode-switch thresholds (land below low, resume at high)."""

    capacity: float = 6000.0
    low_threshold: float = 1000.0
    resume_threshold: float = 3000.0

    def __post_init__(self):
        if not 0 < self.low_threshold < self.resume_threshold <= self.capacity:
            raise ValueError("thresholds must satisfy 0 < low < resume <= capacity")


@dataclass(frozen=True)
class BatteryState:
    level: float  # joules
    mode: str     # WORKING or RESTORING


def rotor_thrust(speed: float, accel: float, p: PowerParams) -> float:
    """Per-rotor thrust balancing weight plus the along-track force.

    `accel` is the along-velocity acceleration (v_next - v) / slot_seconds.
    """
    if speed < 0:
        raise ValueError("speed cannot be negative")
    axial = p.mass * accel + 0.5 * p.air_density * speed * speed * p.flat_plate_area
    return math.hypot(axial, p.mass * p.gravity) / p.n_rotors


def propulsion_power(speed: float, accel: float, p: PowerParams) -> float:
    """Blade-profile + parasite + induced power over all rotors, in watts."""
    th = rotor_thrust(speed, accel, p)
    blade = (p.blade_drag / 8.0) \
        * (th / (p.thrust_coef * p.air_density * p.disc_area) + 3.0 * speed * speed) \
        * math.sqrt(th * p.air_density * p.rotor_solidity ** 2 * p.disc_area / p.thrust_coef)
    parasite = 0.5 * p.fuselage_drag * p.air_density * p.rotor_solidity * p.disc_area * speed ** 3
    hover_term = math.sqrt(th * th / (4.0 * p.air_density ** 2 * p.disc_area ** 2)
                           + speed ** 4 / 4.0) - speed * speed / 2.0
    induced = (1.0 + p.induced_corr) * th * math.sqrt(max(hover_term, 0.0))
    return p.n_rotors * (blade + parasite + induced)


def slot_energy(mode: str, level: float, schedule_nonzero: bool, offload: bool,
                speed: float, accel: float, power: PowerParams, limits: BatteryLimits,
                slot_seconds: float, sched_window: float) -> float:
    """Energy drawn in one slot.

    Restoring below the resume threshold costs nothing (the UAV sits landed).
    While working with a healthy battery, offloading adds transmit energy for
    the offload window; otherwise only propulsion is paid.
    """
    if mode == RESTORING and level < limits.resume_threshold:
        return 0.0
    prop = propulsion_power(speed, accel, power)
    if mode == WORKING and level >= limits.low_threshold and offload:
        if schedule_nonzero:
            return slot_seconds * prop + (slot_seconds - sched_window) * power.comm_power
        return slot_seconds * (prop + power.comm_power)
    return slot_seconds * prop


def harvest(altitude: float, hp: HarvestParams, slot_seconds: float,
            rng: np.random.Generator) -> float:
    """Solar energy gained this slot: Bernoulli arrival times the panel yield."""
    if altitude < 0:
        raise ValueError("altitude cannot be negative")
    arrived = rng.random() < hp.arrival_prob
    if not arrived:
        return 0.0
    flux = hp.transmittance_max - hp.extinction * math.exp(-altitude / hp.scale_height)
    return slot_seconds * hp.conversion_eff * hp.panel_area * hp.ground_irradiance * flux


def update_battery(b: BatteryState, harvested: float, consumed: float,
                   limits: BatteryLimits) -> BatteryState:
    """Apply one slot's energy balance and the two-threshold mode hysteresis."""
    level = min(b.level + harvested - consumed, limits.capacity)
    if level < 0.0:
        # guard: callers flag this slot as energy-exhausted
        level = 0.0
    if level < limits.low_threshold:
        mode = RESTORING
    elif b.mode == RESTORING and level >= limits.resume_threshold:
        mode = WORKING
    else:
        mode = b.mode
    return BatteryState(level=level, mode=mode)
