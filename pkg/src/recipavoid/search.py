"""Minimum-detection-range search across approach scenarios.

For a candidate maneuver model, each approach angle defines a family of
encounters parameterized by the detection range r. The solver finds the
smallest r at which the executed maneuver keeps the pair separated by at
least the collision threshold, using bracketed false position on
g(r) = d_min(r) - d_col. Angles where even the maximum range fails carry a
penalty of twice the maximum range, which also bounds the fitness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import kinematics
from .evolve import encode_inputs
from .kinematics import UavState
from .maneuver import (
    MAX_DEVIATION,
    MAX_SPEED_DELTA,
    ManeuverDecision,
    Strategy,
    decision_to_schedules,
)
from .trajectory import executed_min_distance
from .vehicle import UavSpec

R_MAX_DEFAULT = 200.0


@dataclass
class EncounterScenario:
    """Approach angle [deg], detection range [m], and common speed [m/s]."""

    theta: float
    r: float
    speed: float

    def validate(self, d_col: float, r_max: float = R_MAX_DEFAULT):
        if not 0.0 < self.theta <= 180.0:
            raise ValueError("approach angle must lie in (0, 180] degrees")
        if not d_col <= self.r <= r_max:
            raise ValueError(f"detection range must lie in [{d_col}, {r_max}] m")
        if self.speed <= 0.0:
            raise ValueError("scenario speed must be positive")


@dataclass
class SearchContext:
    """Shared knobs for the evaluation pipeline."""

    spec: UavSpec = field(default_factory=UavSpec)
    reaction_time: float = 0.1  # s between detection and maneuver start
    # the look-ahead must cover the slowest closure in the experiment grid
    # (1 degree at maximum range closes in roughly 683 s at cruise speed),
    # otherwise straight-line collisions escape detection and weak models
    # score spuriously safe ranges at acute angles
    time_horizon: float = 900.0
    r_max: float = R_MAX_DEFAULT
    tolerance: float = 0.01  # m, on both |g| and the range bracket
    max_iterations: int = 50
    scan_points: int = 20
    controllability: Callable[[Strategy, float, float], bool] | None = None

    @property
    def penalty(self) -> float:
        return 2.0 * self.r_max


@dataclass
class ConstantModel:
    """Input-independent decision triple; the per-scenario baseline searches these."""

    delta_v: float = 0.0
    phi: float = 0.0
    selector: float = 0.0  # <= 0.5 selects the speed change strategy

    def activate(self, inputs) -> tuple[float, float, float]:
        return self.delta_v, self.phi, self.selector


@dataclass
class FitnessRecord:
    angles: np.ndarray
    ranges: np.ndarray
    feasible: np.ndarray

    @property
    def worst_range(self) -> float:
        return float(np.max(self.ranges))


def build_scenario(theta: float, r: float, speed: float) -> tuple[UavState, UavState]:
    """Deterministic initial states for one encounter.

    Both vehicles fly straight courses that intersect at the origin with
    interior angle theta, at equal speed and timed for simultaneous arrival,
    so the unperturbed encounter is an exact collision. Vehicle A approaches
    the origin along +x; the pair starts exactly r apart.
    """
    theta_rad = math.radians(theta)
    leg = r / (2.0 * math.sin(theta_rad / 2.0))
    u_b = np.array([math.cos(theta_rad), math.sin(theta_rad)])
    a = UavState(position=np.array([-leg, 0.0]), velocity=np.array([speed, 0.0]))
    b = UavState(position=-leg * u_b, velocity=speed * u_b)
    return a, b


def reciprocal_decision(model, a: UavState, b: UavState, ctx: SearchContext) -> ManeuverDecision:
    """One coherent decision from two independent own-frame model queries.

    Each vehicle encodes the relative state in its own frame and queries the
    same model; the decoded triples are averaged so both vehicles commit to a
    single action without communication.
    """
    out_a = model.activate(encode_inputs(a, b, ctx.spec.cruise_speed))
    out_b = model.activate(encode_inputs(b, a, ctx.spec.cruise_speed))
    delta_v = 0.5 * (out_a[0] + out_b[0])
    phi = 0.5 * (out_a[1] + out_b[1])
    selector = 0.5 * (out_a[2] + out_b[2])
    strategy = Strategy.SPEED_CHANGE if selector <= 0.5 else Strategy.DIRECTION_CHANGE
    return ManeuverDecision(
        strategy=strategy,
        delta_v=min(max(delta_v, 0.0), MAX_SPEED_DELTA),
        phi=min(max(phi, 0.0), MAX_DEVIATION),
        t2_offset=ctx.reaction_time,
    )


def evaluate_model_on_scenario(
    model, theta: float, r: float, ctx: SearchContext | None = None
) -> float:
    """Minimum separation achieved by the model's maneuver on one scenario.

    Returns 0.0 for any decision that cannot be executed: planner rejections,
    numerically degenerate fits, and decisions vetoed by the controllability
    gate are all unsafe by definition.
    """
    ctx = ctx or SearchContext()
    a, b = build_scenario(theta, r, ctx.spec.cruise_speed)
    prediction = kinematics.predict(a, b, ctx.spec.d_col, 0.0, ctx.time_horizon)
    if prediction.t_col is None:
        return prediction.d_min
    try:
        decision = reciprocal_decision(model, a, b, ctx)
        if ctx.controllability is not None:
            param = decision.delta_v if decision.strategy is Strategy.SPEED_CHANGE else decision.phi
            if not ctx.controllability(decision.strategy, ctx.spec.cruise_speed, param):
                return 0.0
        sched_a, sched_b = decision_to_schedules(decision, a, b, prediction)
        return executed_min_distance(sched_a, sched_b).d_min
    except (ValueError, np.linalg.LinAlgError):
        return 0.0


def _false_position(g, lo, g_lo, hi, g_hi, tolerance, max_iterations):
    """Illinois-damped false position; returns a point with g >= 0.

    The bracket invariant g(lo) <= 0 <= g(hi) is maintained throughout, and
    the returned range always sits on the safe side of the root.
    """
    side = 0
    for _ in range(max_iterations):
        denom = g_hi - g_lo
        if denom <= 0.0:
            break
        x = (lo * g_hi - hi * g_lo) / denom
        if not lo < x < hi:
            x = 0.5 * (lo + hi)
        gx = g(x)
        if 0.0 <= gx < tolerance:
            return x
        if gx > 0.0:
            hi, g_hi = x, gx
            if side == 1:
                g_lo *= 0.5
            side = 1
        else:
            lo, g_lo = x, gx
            if side == -1:
                g_hi *= 0.5
            side = -1
        if hi - lo < tolerance:
            return hi
    return hi


def regula_falsi_range(model, theta: float, ctx: SearchContext | None = None) -> float:
    """Minimum detection range solving d_min(r) = d_col for one approach angle.

    Falls back to a uniform scan when the endpoint evaluations do not bracket
    a root, and to the penalty value (twice the maximum range) when the model
    cannot produce a safe maneuver anywhere in the range interval.
    """
    ctx = ctx or SearchContext()
    d_col = ctx.spec.d_col

    def g(r: float) -> float:
        return evaluate_model_on_scenario(model, theta, r, ctx) - d_col

    g_lo = g(d_col)
    if g_lo > 0.0:
        return d_col
    g_hi = g(ctx.r_max)
    lo, hi = d_col, ctx.r_max
    if g_hi < 0.0:
        # no sign change at the endpoints: scan for an interior bracket
        bracket = None
        for r in np.linspace(d_col, ctx.r_max, ctx.scan_points + 2)[1:-1]:
            gr = g(float(r))
            if gr >= 0.0:
                bracket = (lo, g_lo, float(r), gr)
                break
            lo, g_lo = float(r), gr
        if bracket is None:
            return ctx.penalty
        lo, g_lo, hi, g_hi = bracket
    return _false_position(g, lo, g_lo, hi, g_hi, ctx.tolerance, ctx.max_iterations)


def worst_case_range(
    model, angles: Sequence[float], ctx: SearchContext | None = None
) -> FitnessRecord:
    """Per-angle minimum ranges and their maximum, the training objective."""
    angles = np.asarray(list(angles), dtype=float)
    if angles.size == 0:
        raise ValueError("the angle set must not be empty")
    ctx = ctx or SearchContext()
    ranges = np.array([regula_falsi_range(model, float(t), ctx) for t in angles])
    return FitnessRecord(angles=angles, ranges=ranges, feasible=ranges <= ctx.r_max)


def training_angles() -> np.ndarray:
    """The frugal 36-angle training set: every 5 degrees up to head-on."""
    return np.arange(5.0, 181.0, 5.0)


def test_angles() -> np.ndarray:
    """The 180-angle generalization suite: every degree up to head-on."""
    return np.arange(1.0, 181.0, 1.0)


@dataclass
class SweepRow:
    theta: float
    r_star: float
    feasible: bool
    d_min: float
    strategy: str
    delta_v: float
    phi: float


def sweep_model(model, angles: Sequence[float], ctx: SearchContext | None = None) -> list[SweepRow]:
    """Solve every angle and report the decision the model takes at r*."""
    ctx = ctx or SearchContext()
    rows = []
    for theta in angles:
        r_star = regula_falsi_range(model, float(theta), ctx)
        feasible = r_star <= ctx.r_max
        r_eval = r_star if feasible else ctx.r_max
        d_min = evaluate_model_on_scenario(model, float(theta), r_eval, ctx)
        a, b = build_scenario(float(theta), r_eval, ctx.spec.cruise_speed)
        decision = reciprocal_decision(model, a, b, ctx)
        rows.append(
            SweepRow(
                theta=float(theta),
                r_star=r_star,
                feasible=feasible,
                d_min=d_min,
                strategy=decision.strategy.value,
                delta_v=decision.delta_v,
                phi=decision.phi,
            )
        )
    return rows


PSO_BOUNDS = (
    (0.0, 1.0),  # strategy selector
    (0.0, MAX_SPEED_DELTA),  # speed delta
    (0.0, MAX_DEVIATION),  # deviation angle
)


def pso_per_scenario(
    theta: float,
    ctx: SearchContext | None = None,
    particles: int = 60,
    iterations: int = 20,
    seed: int = 0,
    bounds: Sequence[tuple[float, float]] = PSO_BOUNDS,
) -> tuple[ConstantModel, float]:
    """Particle-swarm search for the best constant decision on one angle.

    Standard inertia/cognitive/social update with velocity and position
    clamping; deterministic for a fixed seed.
    """
    ctx = ctx or SearchContext()
    rng = np.random.default_rng(seed)
    lb = np.array([b[0] for b in bounds])
    ub = np.array([b[1] for b in bounds])
    span = ub - lb
    omega, c_personal, c_social = 0.7298, 1.49618, 1.49618

    def objective(x: np.ndarray) -> float:
        model = ConstantModel(delta_v=float(x[1]), phi=float(x[2]), selector=float(x[0]))
        return regula_falsi_range(model, theta, ctx)

    pos = lb + rng.random((particles, 3)) * span
    vel = (rng.random((particles, 3)) - 0.5) * span
    cost = np.array([objective(p) for p in pos])
    best_pos = pos.copy()
    best_cost = cost.copy()
    g_idx = int(np.argmin(best_cost))
    g_pos, g_cost = best_pos[g_idx].copy(), float(best_cost[g_idx])
    if np.all(span == 0.0):
        return ConstantModel(float(g_pos[1]), float(g_pos[2]), float(g_pos[0])), g_cost
    for _ in range(iterations):
        r_p = rng.random((particles, 3))
        r_g = rng.random((particles, 3))
        vel = omega * vel + c_personal * r_p * (best_pos - pos) + c_social * r_g * (g_pos - pos)
        vel = np.clip(vel, -span, span)
        pos = np.clip(pos + vel, lb, ub)
        for i in range(particles):
            c = objective(pos[i])
            if c < best_cost[i]:
                best_cost[i] = c
                best_pos[i] = pos[i]
                if c < g_cost:
                    g_cost = float(c)
                    g_pos = pos[i].copy()
    return ConstantModel(float(g_pos[1]), float(g_pos[2]), float(g_pos[0])), g_cost
