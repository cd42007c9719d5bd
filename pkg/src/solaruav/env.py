"""One-slot MDP of the collection problem: encoding, decoding, transition, reward.

The environment object is immutable; episode state is passed explicitly, so
independently seeded instances can run side by side.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import offload_succeeds, sample_gain, upload_succeeds
from .config import ScenarioConfig
from .energy import (BatteryState, RESTORING, WORKING, harvest, slot_energy,
                     update_battery)
from .freshness import (FreshnessState, advance_aoi, advance_sn_lifetimes,
                        advance_uav_lifetimes, buffer_bits, initial_freshness,
                        sample_arrivals)
from .world import NodeLayout, UavKinematics, slant_distance, step_kinematics


@dataclass(frozen=True)
class CompoundAction:
    """Joint action: sensor schedule + offload flag + already-clamped motion."""

    schedule: int       # 0 = none, 1..N picks a sensor
    offload: bool
    speed_next: float   # m/s, inside [0, v_max]
    heading: float      # radians, turn-limited relative to the previous heading


@dataclass(frozen=True)
class EnvState:
    kin: UavKinematics
    freshness: FreshnessState
    battery: BatteryState
    slot: int  # 1-based; episodes run slots 1..horizon


@dataclass(frozen=True)
class StepEvents:
    """Everything stochastic or derived that happened during one slot."""

    arrivals: np.ndarray      # (N,) bool
    scheduled: int            # 0 = none
    upload_ok: bool
    offload_attempted: bool
    offload_ok: bool
    harvested: float
    consumed: float
    mode: str                 # mode the slot was executed in
    energy_exhausted: bool


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    events: StepEvents


def decode_discrete(index: int, n_sns: int) -> tuple[int, bool]:
    """Map a flat discrete-action index to (schedule, offload); bijective."""
    n_actions = 2 * (n_sns + 1)
    if not 0 <= index < n_actions:
        raise ValueError(f"discrete index {index} outside [0, {n_actions})")
    return index % (n_sns + 1), index >= n_sns + 1


def encode_discrete(schedule: int, offload: bool, n_sns: int) -> int:
    """Inverse of decode_discrete."""
    if not 0 <= schedule <= n_sns:
        raise ValueError("schedule outside 0..N")
    return schedule + (n_sns + 1) * int(offload)


class UavEnv:
    """Episodic environment over a fixed node layout and scenario config."""

    def __init__(self, layout: NodeLayout, scenario: ScenarioConfig):
        if layout.n_sns < 1:
            raise ValueError("environment needs at least one sensor node")
        self.layout = layout
        self.scenario = scenario
        self.limits = scenario.kinematic_limits
        self.n_sns = layout.n_sns
        self.horizon = scenario.horizon
        self.n_discrete = 2 * (self.n_sns + 1)
        self.obs_dim = 5 * self.n_sns + 5

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, rng: np.random.Generator) -> EnvState:
        """Fresh episode: UAV at the DC, at rest, full battery, empty buffers."""
        cfg = self.scenario
        level = cfg.battery.capacity if cfg.initial_energy is None else cfg.initial_energy
        kin = UavKinematics(position=self.layout.dc_position.copy(), speed=0.0,
                            heading=0.0, altitude=cfg.altitude)
        return EnvState(kin=kin, freshness=initial_freshness(self.n_sns),
                        battery=BatteryState(level=level, mode=WORKING), slot=1)

    def step(self, state: EnvState, action: CompoundAction,
             rng: np.random.Generator) -> StepOutcome:
        """Advance one slot: move, receive arrivals, upload, offload, settle energy."""
        cfg = self.scenario
        mode = state.battery.mode
        working = mode == WORKING
        if not working:
            action = CompoundAction(schedule=0, offload=False, speed_next=0.0,
                                    heading=state.kin.heading)

        v_prev = state.kin.speed
        if working:
            kin = step_kinematics(replace(state.kin, altitude=cfg.altitude),
                                  action.speed_next, action.heading, self.limits)
        else:
            kin = replace(state.kin, speed=0.0, altitude=0.0)
        accel = (action.speed_next - v_prev) / cfg.slot_seconds

        arrivals = sample_arrivals(self.n_sns, cfg.arrival_rate, rng)
        fresh = advance_sn_lifetimes(state.freshness, arrivals)

        schedule = action.schedule
        upload_ok = False
        if schedule != 0:
            d = slant_distance(kin, self.layout.node_position(schedule))
            draw = sample_gain(d, cfg.altitude, cfg.channel, rng)
            upload_ok = upload_succeeds(draw, cfg.channel) and fresh.sn_has_packet(schedule)
        fresh = advance_uav_lifetimes(fresh, schedule if upload_ok else None)

        offload_attempted = bool(action.offload)
        offload_ok = False
        if offload_attempted:
            window = cfg.slot_seconds - cfg.sched_window if schedule != 0 else cfg.slot_seconds
            d = slant_distance(kin, self.layout.dc_position)
            draw = sample_gain(d, cfg.altitude, cfg.channel, rng)
            offload_ok = offload_succeeds(draw, buffer_bits(fresh, cfg.packet_bits),
                                          window, cfg.channel)
        fresh = advance_aoi(fresh, offload_ok)

        consumed = slot_energy(mode, state.battery.level, schedule != 0,
                               offload_attempted, v_prev, accel, cfg.power,
                               cfg.battery, cfg.slot_seconds, cfg.sched_window)
        harvested = harvest(kin.altitude, cfg.harvest, cfg.slot_seconds, rng)
        exhausted = consumed > state.battery.level
        battery = update_battery(state.battery, harvested, consumed, cfg.battery)

        reward = -(cfg.aoi_weight * float(fresh.aoi.sum())
                   + cfg.energy_weight * consumed) / self.horizon
        events = StepEvents(arrivals=arrivals, scheduled=schedule, upload_ok=upload_ok,
                            offload_attempted=offload_attempted, offload_ok=offload_ok,
                            harvested=harvested, consumed=consumed, mode=mode,
                            energy_exhausted=exhausted)
        next_state = EnvState(kin=kin, freshness=fresh, battery=battery,
                              slot=state.slot + 1)
        return StepOutcome(next_state=next_state, reward=reward, events=events)

    # -- observation / action spaces ------------------------------------------

    def relative_positions(self, state: EnvState) -> np.ndarray:
        """(N+1, 2) offsets UAV -> node, DC first."""
        return state.kin.position[None, :] - self.layout.all_positions()

    def encode_state(self, state: EnvState, pad_to: int | None = None) -> np.ndarray:
        """Normalized observation vector of length 5*n+5 (n = pad_to or N).

        Layout: relative positions / area, speed / v_max, heading / 2pi,
        then per-sensor ages (sensor, UAV, DC) / horizon with -1/horizon
        marking an empty buffer, then battery / capacity.  Padded sensor
        slots read as "no such sensor": zero offset, empty buffers, zero age.
        """
        cfg = self.scenario
        n = self.n_sns
        n_pad = pad_to if pad_to is not None else n
        if n_pad < n:
            raise ValueError("pad_to smaller than the live sensor count")
        horizon = float(self.horizon)

        psi = np.zeros((n_pad + 1, 2))
        psi[:n + 1] = self.relative_positions(state) / cfg.area_side

        def ages(values: np.ndarray, absent_pad: bool) -> np.ndarray:
            out = np.full(n_pad, -1.0 if absent_pad else 0.0)
            out[:n] = np.where(np.isnan(values), -1.0, np.minimum(values, horizon))
            return out / horizon

        return np.concatenate([
            psi.ravel(),
            [state.kin.speed / cfg.v_max, state.kin.heading / (2.0 * np.pi)],
            ages(state.freshness.sn_lifetime, absent_pad=True),
            ages(state.freshness.uav_lifetime, absent_pad=True),
            ages(state.freshness.aoi, absent_pad=False),
            [state.battery.level / cfg.battery.capacity],
        ])

    def action_mask(self, pad_to: int | None = None) -> np.ndarray | None:
        """Valid discrete indices when the policy is sized for pad_to sensors."""
        n_pad = pad_to if pad_to is not None else self.n_sns
        if n_pad == self.n_sns:
            return None
        mask = np.zeros(2 * (n_pad + 1), dtype=bool)
        for half in (0, 1):
            base = half * (n_pad + 1)
            mask[base:base + self.n_sns + 1] = True
        return mask
