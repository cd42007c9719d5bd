"""Node layout, UAV planar kinematics, and the feasibility clamp for raw controls."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class NodeLayout:
    """Positions of the data center (node 0) and the N sensor nodes (1..N)."""

    sn_positions: np.ndarray  # (N, 2) meters
    dc_position: np.ndarray   # (2,) meters
    area_side: float          # meters, side of the deployment square

    def __post_init__(self):
        sn = np.atleast_2d(np.asarray(self.sn_positions, dtype=float))
        dc = np.asarray(self.dc_position, dtype=float).reshape(2)
        object.__setattr__(self, "sn_positions", sn)
        object.__setattr__(self, "dc_position", dc)
        object.__setattr__(self, "area_side", float(self.area_side))
        if sn.ndim != 2 or sn.shape[1] != 2 or sn.shape[0] < 1:
            raise ValueError("sn_positions must be an (N, 2) array with N >= 1")
        if self.area_side <= 0:
            raise ValueError("area_side must be positive")
        lo, hi = -1e-9, self.area_side + 1e-9
        if np.any(sn < lo) or np.any(sn > hi):
            raise ValueError("sensor nodes must lie inside the deployment square")

    @property
    def n_sns(self) -> int:
        return int(self.sn_positions.shape[0])

    def node_position(self, n: int) -> np.ndarray:
        """Node 0 is the data center; nodes 1..N are sensor nodes."""
        if n == 0:
            return self.dc_position
        return self.sn_positions[n - 1]

    def all_positions(self) -> np.ndarray:
        """(N+1, 2) array with the DC first, then the SNs."""
        return np.vstack([self.dc_position[None, :], self.sn_positions])


@dataclass(frozen=True)
class KinematicLimits:
    """Hard bounds on the UAV's speed and per-slot turn."""

    v_max: float = 20.0
    turn_max: float = math.pi / 3.0
    slot_seconds: float = 0.5

    def __post_init__(self):
        if min(self.v_max, self.turn_max, self.slot_seconds) <= 0:
            raise ValueError("kinematic limits must be strictly positive")


@dataclass(frozen=True)
class UavKinematics:
    """UAV ground-projection position, speed, last flown heading, and altitude."""

    position: np.ndarray  # (2,) meters
    speed: float          # m/s
    heading: float        # radians in [0, 2*pi)
    altitude: float       # meters; 0 when landed

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))


def clamp_action(raw_speed: float, raw_turn: float, kin: UavKinematics,
                 lim: KinematicLimits) -> tuple[float, float]:
    """Squash unbounded control outputs into the feasible speed/turn box.

    tanh maps raw_speed onto [0, v_max] and raw_turn onto a heading change
    within [-turn_max, turn_max] relative to the previous heading.  Total over
    all real inputs; the returned heading is normalized to [0, 2*pi).
    """
    speed = 0.5 * (math.tanh(raw_speed) + 1.0) * lim.v_max
    speed = min(max(speed, 0.0), lim.v_max)
    turn = lim.turn_max * math.tanh(raw_turn)
    heading = (kin.heading + turn) % TWO_PI
    return speed, heading


def step_kinematics(kin: UavKinematics, speed_next: float, heading: float,
                    lim: KinematicLimits) -> UavKinematics:
    """Advance the UAV one slot under the midpoint-speed displacement rule."""
    travel = 0.5 * (kin.speed + speed_next) * lim.slot_seconds
    position = kin.position + travel * np.array([math.cos(heading), math.sin(heading)])
    return UavKinematics(position=position, speed=speed_next, heading=heading,
                         altitude=kin.altitude)


def slant_distance(kin: UavKinematics, node: np.ndarray) -> float:
    """3D distance from the UAV to a ground node."""
    node = np.asarray(node, dtype=float)
    dx = kin.position[0] - node[0]
    dy = kin.position[1] - node[1]
    return math.sqrt(kin.altitude * kin.altitude + dx * dx + dy * dy)
