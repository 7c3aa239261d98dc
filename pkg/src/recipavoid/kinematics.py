"""Closed-form collision prediction for two constant-velocity planar vehicles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _vec2(value) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.shape != (2,):
        raise ValueError(f"expected a planar vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector components must be finite")
    return v


@dataclass
class UavState:
    """Planar position [m] and velocity [m/s] of one vehicle at a time instant."""

    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        self.position = _vec2(self.position)
        self.velocity = _vec2(self.velocity)

    @property
    def speed(self) -> float:
        return float(np.hypot(self.velocity[0], self.velocity[1]))

    def position_at(self, t: float) -> np.ndarray:
        """Straight-line extrapolation of the position t seconds ahead."""
        return self.position + self.velocity * t


@dataclass
class CollisionPrediction:
    """Closest-approach summary over a look-ahead window.

    ``t_col`` is the earliest threshold-crossing time and is ``None`` when the
    pair never closes below the collision threshold inside the window.
    """

    t_min: float
    d_min: float
    t_col: float | None
    t_horizon: float


def separation_at(a: UavState, b: UavState, t: float) -> float:
    """Inter-vehicle distance at time t under straight-line extrapolation."""
    dx = (a.position[0] - b.position[0]) + (a.velocity[0] - b.velocity[0]) * t
    dy = (a.position[1] - b.position[1]) + (a.velocity[1] - b.velocity[1]) * t
    return math.hypot(dx, dy)


def closest_approach(
    a: UavState, b: UavState, t1: float = 0.0, t_horizon: float = 30.0
) -> CollisionPrediction:
    """Time and distance of closest approach inside the window [t1, t_horizon).

    The separation is a quadratic in time, so the minimizer is analytic:
    -(dp . dv)/|dv|^2 clamped into the window. A co-moving pair (dv = 0) has
    constant separation; the window start is returned for determinism.
    """
    if not t1 < t_horizon:
        raise ValueError("window start must precede the horizon")
    dp = a.position - b.position
    dv = a.velocity - b.velocity
    dv2 = float(dv @ dv)
    if dv2 == 0.0:
        t_min = t1
    else:
        t_star = -float(dp @ dv) / dv2
        # keep t_min strictly below the horizon (half-open window)
        t_min = min(max(t_star, t1), np.nextafter(t_horizon, t1))
    return CollisionPrediction(
        t_min=t_min,
        d_min=separation_at(a, b, t_min),
        t_col=None,
        t_horizon=t_horizon,
    )


def collision_time(
    a: UavState,
    b: UavState,
    d_col: float,
    t1: float = 0.0,
    t_horizon: float = 30.0,
) -> float | None:
    """Earliest time in (t1, t_min] at which the separation drops to d_col.

    Solves |dp + dv t|^2 = d_col^2 with the numerically stable quadratic form
    and returns the smaller admissible root; ``None`` when the pair never
    closes below the threshold inside the window.
    """
    if d_col <= 0.0:
        raise ValueError("collision threshold must be positive")
    pred = closest_approach(a, b, t1, t_horizon)
    if pred.d_min > d_col:
        return None
    dp = a.position - b.position
    dv = a.velocity - b.velocity
    qa = float(dv @ dv)
    if qa == 0.0:
        return None  # constant separation: no crossing to report
    qb = 2.0 * float(dp @ dv)
    qc = float(dp @ dp) - d_col * d_col
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    if qb == 0.0:
        roots = (-sq / (2.0 * qa), sq / (2.0 * qa))
    else:
        q = -0.5 * (qb + math.copysign(sq, qb))
        roots = sorted((q / qa, qc / q))
    for root in roots:
        if t1 < root <= pred.t_min:
            return root
    return None


def predict(
    a: UavState,
    b: UavState,
    d_col: float,
    t1: float = 0.0,
    t_horizon: float = 30.0,
) -> CollisionPrediction:
    """Closest approach plus the threshold-crossing time in one record."""
    pred = closest_approach(a, b, t1, t_horizon)
    pred.t_col = collision_time(a, b, d_col, t1, t_horizon)
    return pred
