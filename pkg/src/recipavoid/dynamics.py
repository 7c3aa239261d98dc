"""Thrust-limited planar tracking model and the controller-failure classifier.

The geometric pipeline assumes planned trajectories are flyable. This module
checks that assumption: a point-mass vehicle with a saturated PD position
controller tracks a fitted spline, and the trace is labeled uncontrollable
when the tracking error or the actuator saturation exceeds fixed fractions of
the safety budget. A nearest-neighbor classifier trained on labeled samples
lets the search veto doomed decisions without simulating them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .maneuver import MAX_DEVIATION, MAX_SPEED_DELTA, Strategy
from .search import (
    ConstantModel,
    SearchContext,
    build_scenario,
    reciprocal_decision,
    regula_falsi_range,
)
from .trajectory import PolySpline, fit_min_snap, straight_line_spline
from .vehicle import UavSpec
from . import kinematics, maneuver

TRACKING_ERROR_FRACTION = 0.5  # of d_col
SATURATION_LIMIT = 0.2  # fraction of steps allowed at the thrust limit
SPEED_RANGE = (5.0, 25.0)  # m/s sampling box for classifier speeds


@dataclass
class PdGains:
    kp: float = 200.0
    kd: float = 2.0 * math.sqrt(200.0)  # critically damped for unit mass

    def validate(self):
        if self.kp <= 0.0 or self.kd <= 0.0:
            raise ValueError("PD gains must be positive")


@dataclass
class ExecutedTrace:
    """Uniform-step tracking record with its summary statistics."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    commanded: np.ndarray
    max_tracking_error: float
    saturation_fraction: float
    diverged: bool = False


def simulate_tracking(
    spline: PolySpline,
    spec: UavSpec | None = None,
    gains: PdGains | None = None,
    dt: float = 0.02,
) -> ExecutedTrace:
    """Track a spline with a saturated PD law from an on-reference start.

    Dynamics are p' = v, v' = u/m with u the PD command clamped to the
    planar thrust budget; integration is fixed-step RK4. A non-finite state
    marks the trace diverged instead of raising.
    """
    spec = spec or UavSpec()
    gains = gains or PdGains()
    gains.validate()
    if not 0.0 < dt <= 0.05:
        raise ValueError("time step must lie in (0, 0.05] s")
    span = float(spline.knots[-1] - spline.knots[0])
    n = max(1, int(math.ceil(span / dt - 1e-9)))
    step = span / n
    # references on the half-step grid cover all RK4 stage times
    ts = spline.knots[0] + np.arange(2 * n + 1) * (0.5 * step)
    ref_p = spline.position(ts)
    ref_v = spline.velocity(ts)

    kp, kd = gains.kp, gains.kd
    inv_m = 1.0 / spec.mass
    u_max = spec.planar_thrust
    px, py = float(ref_p[0, 0]), float(ref_p[0, 1])
    vx, vy = float(ref_v[0, 0]), float(ref_v[0, 1])

    times = np.empty(n + 1)
    positions = np.empty((n + 1, 2))
    velocities = np.empty((n + 1, 2))
    times[0] = ts[0]
    positions[0] = (px, py)
    velocities[0] = (vx, vy)
    max_err = 0.0
    saturated_steps = 0
    diverged = False

    def accel(ix, qx, qy, wx, wy):
        ux = kp * (ref_p[ix, 0] - qx) + kd * (ref_v[ix, 0] - wx)
        uy = kp * (ref_p[ix, 1] - qy) + kd * (ref_v[ix, 1] - wy)
        mag = math.hypot(ux, uy)
        if mag > u_max:
            scale = u_max / mag
            return ux * scale * inv_m, uy * scale * inv_m, True
        return ux * inv_m, uy * inv_m, False

    h = step
    for i in range(n):
        k1x, k1y, sat = accel(2 * i, px, py, vx, vy)
        if sat:
            saturated_steps += 1
        k2x, k2y, _ = accel(2 * i + 1, px + 0.5 * h * vx, py + 0.5 * h * vy,
                            vx + 0.5 * h * k1x, vy + 0.5 * h * k1y)
        k3x, k3y, _ = accel(2 * i + 1, px + 0.5 * h * vx + 0.25 * h * h * k1x,
                            py + 0.5 * h * vy + 0.25 * h * h * k1y,
                            vx + 0.5 * h * k2x, vy + 0.5 * h * k2y)
        k4x, k4y, _ = accel(2 * i + 2, px + h * vx + 0.5 * h * h * k2x,
                            py + h * vy + 0.5 * h * h * k2y,
                            vx + h * k3x, vy + h * k3y)
        px += h * vx + h * h * (k1x + k2x + k3x) / 6.0
        py += h * vy + h * h * (k1y + k2y + k3y) / 6.0
        vx += h * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
        vy += h * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
        times[i + 1] = ts[2 * i + 2]
        positions[i + 1] = (px, py)
        velocities[i + 1] = (vx, vy)
        if not (math.isfinite(px) and math.isfinite(py) and math.isfinite(vx) and math.isfinite(vy)):
            diverged = True
            times = times[: i + 2]
            positions = positions[: i + 2]
            velocities = velocities[: i + 2]
            break
        err = math.hypot(px - ref_p[2 * i + 2, 0], py - ref_p[2 * i + 2, 1])
        if err > max_err:
            max_err = err

    n_done = len(times) - 1
    return ExecutedTrace(
        times=times,
        positions=positions,
        velocities=velocities,
        commanded=ref_p[0 : 2 * n_done + 1 : 2].copy(),
        max_tracking_error=math.inf if diverged else max_err,
        saturation_fraction=saturated_steps / n if n else 0.0,
        diverged=diverged,
    )


def label_controllability(trace: ExecutedTrace, spec: UavSpec | None = None) -> bool:
    """True when the controller held the plan: bounded error, bounded saturation."""
    spec = spec or UavSpec()
    if trace.diverged:
        return False
    return (
        trace.max_tracking_error <= TRACKING_ERROR_FRACTION * spec.d_col
        and trace.saturation_fraction <= SATURATION_LIMIT
    )


# canonical encounter angles used to realize a (speed, parameter) sample as a
# trajectory: head-on stresses the direction change; a perpendicular crossing
# is the natural speed-change case since speed changes cannot separate a
# purely head-on pair
_CANONICAL_THETA = {Strategy.DIRECTION_CHANGE: 180.0, Strategy.SPEED_CHANGE: 90.0}


def marginal_maneuver_spline(
    strategy: Strategy,
    speed: float,
    param: float,
    spec: UavSpec | None = None,
    reaction_time: float = 0.1,
) -> PolySpline:
    """Planned trajectory of the tightest scenario this action can still solve.

    The search consults the classifier exactly at such margins, so samples are
    labeled on the just-feasible maneuver: the canonical encounter is solved
    for the smallest detection range at which the action keeps the pair safe,
    and the resulting plan is what gets flown. Actions too weak to solve any
    range in bounds fall back to the gentlest case at maximum range.
    """
    spec = spec or UavSpec()
    scenario_spec = replace(spec, cruise_speed=speed)
    ctx = SearchContext(spec=scenario_spec, reaction_time=reaction_time)
    theta = _CANONICAL_THETA[strategy]
    if strategy is Strategy.SPEED_CHANGE:
        model = ConstantModel(delta_v=param, phi=0.0, selector=0.0)
    else:
        model = ConstantModel(delta_v=0.0, phi=param, selector=1.0)
    r_star = regula_falsi_range(model, theta, ctx)
    # the symmetric collision course closes range at a constant 2 v sin(theta/2),
    # so this floor guarantees the plan at least 0.05 s of maneuver room
    closing = 2.0 * speed * math.sin(math.radians(theta) / 2.0)
    r_floor = spec.d_col + closing * (reaction_time + 0.05)
    r = min(max(r_star, r_floor), ctx.r_max)
    a, b = build_scenario(theta, r, speed)
    prediction = kinematics.predict(a, b, spec.d_col, 0.0, ctx.time_horizon)
    if prediction.t_col is None or prediction.t_col <= reaction_time:
        # no plannable collision at this range: fly the unperturbed line
        times = np.linspace(0.0, ctx.time_horizon / 2.0, 5)
        return straight_line_spline(a, times)
    decision = reciprocal_decision(model, a, b, ctx)
    sched_a, _ = maneuver.decision_to_schedules(decision, a, b, prediction)
    return fit_min_snap(sched_a)


@dataclass
class ClassifierDataset:
    """Labeled (speed, parameter) samples for one strategy."""

    strategy: Strategy
    speeds: np.ndarray
    params: np.ndarray
    labels: np.ndarray  # bool, True = controllable
    seed: int

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# strategy={self.strategy.value} seed={self.seed}\n")
            fh.write("strategy,speed,param,label\n")
            for v, p, l in zip(self.speeds, self.params, self.labels):
                fh.write(f"{self.strategy.value},{v!r},{p!r},{int(l)}\n")

    @staticmethod
    def load(path) -> "ClassifierDataset":
        speeds, params, labels = [], [], []
        strategy = None
        seed = 0
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    for token in line[1:].split():
                        key, _, value = token.partition("=")
                        if key == "seed":
                            seed = int(value)
                    continue
                if not line or line.startswith("strategy,"):
                    continue
                name, v, p, l = line.split(",")
                strategy = Strategy(name)
                speeds.append(float(v))
                params.append(float(p))
                labels.append(bool(int(l)))
        if strategy is None:
            raise ValueError(f"no samples found in {path}")
        return ClassifierDataset(
            strategy=strategy,
            speeds=np.array(speeds),
            params=np.array(params),
            labels=np.array(labels, dtype=bool),
            seed=seed,
        )


def generate_classifier_dataset(
    strategy: Strategy,
    n: int = 1000,
    spec: UavSpec | None = None,
    gains: PdGains | None = None,
    dt: float = 0.01,
    seed: int = 0,
) -> ClassifierDataset:
    """Sample the (speed, parameter) box uniformly and label each maneuver."""
    if n < 100:
        raise ValueError("a useful dataset needs at least 100 samples")
    spec = spec or UavSpec()
    gains = gains or PdGains()
    rng = np.random.default_rng(seed)
    speeds = rng.uniform(SPEED_RANGE[0], SPEED_RANGE[1], n)
    upper = MAX_SPEED_DELTA if strategy is Strategy.SPEED_CHANGE else MAX_DEVIATION
    params = rng.uniform(0.0, upper, n)
    labels = np.empty(n, dtype=bool)
    for i in range(n):
        spline = marginal_maneuver_spline(strategy, float(speeds[i]), float(params[i]), spec)
        trace = simulate_tracking(spline, spec, gains, dt)
        labels[i] = label_controllability(trace, spec)
    return ClassifierDataset(strategy=strategy, speeds=speeds, params=params, labels=labels, seed=seed)


@dataclass
class FailureClassifier:
    """Distance-weighted nearest-neighbor gate over standardized features.

    The model is the training set itself; predictions are deterministic and
    independent of sample order (distance ties are included wholesale).
    """

    strategy: Strategy
    features: np.ndarray  # (n, 2) raw (speed, param)
    labels: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    k: int
    seed: int
    cv_misclassification: float

    def predict(self, speed: float, param: float) -> bool:
        q = (np.array([speed, param]) - self.mean) / self.std
        z = (self.features - self.mean) / self.std
        d = np.sqrt(np.sum((z - q) ** 2, axis=1))
        if len(d) <= self.k:
            chosen = np.ones(len(d), dtype=bool)
        else:
            kth = np.sort(d)[self.k - 1]
            chosen = d <= kth + 1e-12
        w = 1.0 / (d[chosen] + 1e-9)
        vote = float(np.sum(w * self.labels[chosen]) / np.sum(w))
        return vote >= 0.5

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                f"# strategy={self.strategy.value} k={self.k} seed={self.seed} "
                f"cv_misclassification={self.cv_misclassification!r}\n"
            )
            fh.write("strategy,speed,param,label\n")
            for (v, p), l in zip(self.features, self.labels):
                fh.write(f"{self.strategy.value},{v!r},{p!r},{int(l)}\n")

    @staticmethod
    def load(path) -> "FailureClassifier":
        dataset = ClassifierDataset.load(path)
        k, cv = 15, math.nan
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
        for token in header.lstrip("# ").split():
            key, _, value = token.partition("=")
            if key == "k":
                k = int(value)
            elif key == "cv_misclassification":
                cv = float(value)
        clf = train_failure_classifier(dataset, k=k, folds=0)
        clf.cv_misclassification = cv
        return clf


def _knn_predict(train_z, train_labels, query_z, k):
    d = np.sqrt(np.sum((train_z - query_z) ** 2, axis=1))
    if len(d) <= k:
        chosen = np.ones(len(d), dtype=bool)
    else:
        kth = np.sort(d)[k - 1]
        chosen = d <= kth + 1e-12
    w = 1.0 / (d[chosen] + 1e-9)
    return float(np.sum(w * train_labels[chosen]) / np.sum(w)) >= 0.5


def train_failure_classifier(
    dataset: ClassifierDataset, k: int = 15, folds: int = 10, seed: int = 0
) -> FailureClassifier:
    """Fit the nearest-neighbor gate and report cross-validated error.

    ``folds=0`` skips validation (used when rehydrating a saved model).
    """
    labels = dataset.labels.astype(float)
    if len(np.unique(dataset.labels)) < 2:
        raise ValueError("training requires both controllable and uncontrollable samples")
    features = np.column_stack((dataset.speeds, dataset.params))
    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), 1e-12)
    z = (features - mean) / std

    cv_error = math.nan
    if folds:
        n = len(labels)
        rng = np.random.default_rng(seed)
        assignment = np.repeat(np.arange(folds), math.ceil(n / folds))[:n]
        rng.shuffle(assignment)
        wrong = 0
        for fold in range(folds):
            hold = assignment == fold
            keep = ~hold
            for idx in np.flatnonzero(hold):
                pred = _knn_predict(z[keep], labels[keep], z[idx], k)
                wrong += pred != dataset.labels[idx]
        cv_error = wrong / n

    return FailureClassifier(
        strategy=dataset.strategy,
        features=features,
        labels=labels,
        mean=mean,
        std=std,
        k=k,
        seed=seed,
        cv_misclassification=cv_error,
    )


def classify(classifier: FailureClassifier, speed: float, param: float) -> bool:
    return classifier.predict(speed, param)


def make_controllability_gate(classifiers: dict[Strategy, FailureClassifier]):
    """Adapter turning per-strategy classifiers into the search-side veto."""

    def gate(strategy: Strategy, speed: float, param: float) -> bool:
        clf = classifiers.get(strategy)
        return True if clf is None else clf.predict(speed, param)

    return gate
