"""Waypoint schedules for the two reciprocal avoidance strategies.

A maneuver perturbs each vehicle's motion between the start time t2 and the
recovery time t4, symmetric about the predicted crossing time t3. Waypoints at
t1 and t5 sit exactly on the unperturbed path so the mission timeline is
preserved once the maneuver ends.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .kinematics import CollisionPrediction, UavState

MAX_SPEED_DELTA = 5.0  # m/s
MAX_DEVIATION = np.radians(30.0)
MAX_START_OFFSET = 3.0  # s


class Strategy(enum.Enum):
    SPEED_CHANGE = "speed_change"
    DIRECTION_CHANGE = "direction_change"


@dataclass
class ManeuverDecision:
    """One shared avoidance action: a strategy, its parameter, and timing."""

    strategy: Strategy
    delta_v: float = 0.0
    phi: float = 0.0
    t2_offset: float = 0.1

    def validate(self):
        if not 0.0 <= self.delta_v <= MAX_SPEED_DELTA:
            raise ValueError(f"speed delta {self.delta_v} outside [0, {MAX_SPEED_DELTA}] m/s")
        if not 0.0 <= self.phi <= MAX_DEVIATION + 1e-12:
            raise ValueError(f"deviation angle {self.phi} outside [0, {MAX_DEVIATION}] rad")
        if not 0.0 < self.t2_offset <= MAX_START_OFFSET:
            raise ValueError(f"start offset {self.t2_offset} outside (0, {MAX_START_OFFSET}] s")


@dataclass
class WaypointSchedule:
    """Five timed waypoints (t1..t5) with positions and knot velocities for one UAV."""

    times: np.ndarray  # (5,)
    positions: np.ndarray  # (5, 2)
    velocities: np.ndarray  # (5, 2)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.times.shape != (5,) or self.positions.shape != (5, 2):
            raise ValueError("a schedule holds exactly five timed waypoints")
        if not np.all(np.diff(self.times) > 0.0):
            raise ValueError("waypoint times must be strictly increasing")


def _maneuver_times(t2: float, t_col: float) -> np.ndarray:
    # t3 is the symmetry point; recovery mirrors the approach and a trailing
    # segment of equal duration gives the trajectory room to settle.
    t1 = 0.0
    t3 = t_col
    t4 = 2.0 * t3 - t2
    t5 = t4 + (t3 - t2)
    return np.array([t1, t2, t3, t4, t5])


def _integrate_schedule(state: UavState, times: np.ndarray, segment_velocities) -> WaypointSchedule:
    """Build waypoints by integrating per-segment average velocities from t1."""
    positions = np.empty((5, 2))
    positions[0] = state.position
    for i in range(4):
        positions[i + 1] = positions[i] + segment_velocities[i] * (times[i + 1] - times[i])
    velocities = np.empty((5, 2))
    velocities[0] = segment_velocities[0]
    velocities[4] = segment_velocities[3]
    for i in (1, 2, 3):
        velocities[i] = 0.5 * (segment_velocities[i - 1] + segment_velocities[i])
    return WaypointSchedule(times=times.copy(), positions=positions, velocities=velocities)


def _accelerating_vehicle(a: UavState, b: UavState) -> int:
    """Index (0 for a, 1 for b) of the vehicle that takes the accelerate role.

    The slower vehicle accelerates. At equal speeds the vehicle that sees the
    other on its left takes the role; the sign test is frame-invariant, so
    both vehicles resolve it identically without communication. An exactly
    collinear equal-speed pair has no frame-invariant discriminator, so the
    lexicographically smaller position breaks the residual tie.
    """
    sa, sb = a.speed, b.speed
    if abs(sa - sb) > 1e-12:
        return 0 if sa < sb else 1
    rel = b.position - a.position
    cross = a.velocity[0] * rel[1] - a.velocity[1] * rel[0]
    if abs(cross) > 1e-9:
        return 0 if cross > 0.0 else 1
    return 0 if tuple(a.position) < tuple(b.position) else 1


def plan_speed_change(
    a: UavState, b: UavState, t_col: float, t2: float, delta_v: float
) -> tuple[WaypointSchedule, WaypointSchedule]:
    """Symmetric speed-swap maneuver: one vehicle slows while the other speeds up.

    Over [t2, t3] the designated decelerator drops its average speed by
    delta_v along its unchanged heading while the other gains the same amount;
    over [t3, t4] the roles reverse so the displacement across [t2, t4] equals
    the unperturbed displacement. Headings never change.
    """
    if not 0.0 < t2 < t_col:
        raise ValueError("maneuver must start after t1 and before the predicted collision")
    if not 0.0 <= delta_v <= MAX_SPEED_DELTA:
        raise ValueError(f"speed delta {delta_v} outside [0, {MAX_SPEED_DELTA}] m/s")
    times = _maneuver_times(t2, t_col)
    accel_idx = _accelerating_vehicle(a, b)
    schedules = []
    for idx, state in enumerate((a, b)):
        speed = state.speed
        if speed <= 0.0:
            raise ValueError("speed-change planning needs a moving vehicle")
        heading = state.velocity / speed
        signed = delta_v if idx == accel_idx else -delta_v
        v23 = (speed + signed) * heading
        # second-stage average restores the unperturbed displacement over [t2, t4]
        v34 = (state.velocity * (times[3] - times[1]) - v23 * (times[2] - times[1])) / (
            times[3] - times[2]
        )
        segs = [state.velocity, v23, v34, state.velocity]
        schedules.append(_integrate_schedule(state, times, segs))
    return schedules[0], schedules[1]


def plan_direction_change(
    a: UavState, b: UavState, t_col: float, t2: float, phi: float
) -> tuple[WaypointSchedule, WaypointSchedule]:
    """Mutual left-deviation maneuver returning to the original path at t4.

    Both vehicles rotate their average velocity counter-clockwise by phi over
    [t2, t3], scaled by 1/cos(phi) so progress along the original course is
    preserved, then mirror the turn over [t3, t4] to rejoin the path.
    """
    if not 0.0 < t2 < t_col:
        raise ValueError("maneuver must start after t1 and before the predicted collision")
    if phi < 0.0:
        raise ValueError("deviation angle must be non-negative")
    if phi >= np.pi / 2.0:
        raise ValueError("deviation angle must stay below 90 degrees")
    times = _maneuver_times(t2, t_col)
    c, s = np.cos(phi), np.sin(phi)
    rot_left = np.array([[c, -s], [s, c]])
    rot_right = rot_left.T
    schedules = []
    for state in (a, b):
        v23 = (rot_left @ state.velocity) / c
        v34 = (rot_right @ state.velocity) / c
        segs = [state.velocity, v23, v34, state.velocity]
        schedules.append(_integrate_schedule(state, times, segs))
    return schedules[0], schedules[1]


def decision_to_schedules(
    decision: ManeuverDecision,
    a: UavState,
    b: UavState,
    prediction: CollisionPrediction,
) -> tuple[WaypointSchedule, WaypointSchedule]:
    """Apply one shared decision reciprocally to both vehicles."""
    if prediction.t_col is None:
        raise ValueError("cannot plan a maneuver without a predicted collision time")
    decision.validate()
    t2 = decision.t2_offset
    if decision.strategy is Strategy.SPEED_CHANGE:
        return plan_speed_change(a, b, prediction.t_col, t2, decision.delta_v)
    return plan_direction_change(a, b, prediction.t_col, t2, decision.phi)
