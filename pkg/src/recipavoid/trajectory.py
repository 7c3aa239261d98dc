"""Minimum-snap splines through waypoint schedules and exact pair separation.

Each trajectory is a piecewise 7th-order polynomial, one segment per waypoint
interval, fitted per axis by minimizing the integral of the squared fourth
time-derivative subject to waypoint interpolation, mission velocity at the
endpoints, and continuity of derivatives one through four at interior knots.
Segments are solved on a normalized [0, 1] clock; degree-7 systems on raw
times are too ill-conditioned for the segment durations seen here.

The minimum separation of two such trajectories is found exactly: on every
segment the squared distance is a polynomial of degree at most 14, so its
critical points are roots of a degree-13 polynomial, computed as companion
matrix eigenvalues and polished with a few Newton steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .kinematics import UavState, closest_approach
from .maneuver import WaypointSchedule

N_COEF = 8  # degree 7
SNAP_ORDER = 4


def _derivative_row(order: int, tau: float) -> np.ndarray:
    """Basis row for the order-th derivative of sum(c_k tau^k) at tau."""
    row = np.zeros(N_COEF)
    for k in range(order, N_COEF):
        row[k] = factorial(k) / factorial(k - order) * tau ** (k - order)
    return row


_ROW_T0 = [_derivative_row(order, 0.0) for order in range(SNAP_ORDER + 1)]
_ROW_T1 = [_derivative_row(order, 1.0) for order in range(SNAP_ORDER + 1)]


def _snap_gram() -> np.ndarray:
    """Gram matrix of integral(d4(tau^i) d4(tau^j)) over the unit segment."""
    q = np.zeros((N_COEF, N_COEF))
    for i in range(SNAP_ORDER, N_COEF):
        for j in range(SNAP_ORDER, N_COEF):
            ci = factorial(i) / factorial(i - SNAP_ORDER)
            cj = factorial(j) / factorial(j - SNAP_ORDER)
            q[i, j] = ci * cj / (i + j - 2 * SNAP_ORDER + 1)
    return q


_SNAP_GRAM = _snap_gram()


@dataclass
class PolySpline:
    """Piecewise polynomial per axis on normalized segment clocks.

    ``coefficients[s, axis, k]`` multiplies ``tau**k`` on segment ``s`` where
    ``tau = (t - knots[s]) / durations[s]``.
    """

    knots: np.ndarray  # (5,)
    coefficients: np.ndarray  # (4, 2, 8)

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.knots)

    def _locate(self, t):
        idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, 3)
        h = self.durations[idx]
        tau = (np.asarray(t, dtype=float) - self.knots[idx]) / h
        return idx, tau, h

    def derivative(self, t, order: int = 0) -> np.ndarray:
        """Evaluate the order-th time derivative; shape (..., 2)."""
        t = np.asarray(t, dtype=float)
        idx, tau, h = self._locate(t)
        out = np.zeros(t.shape + (2,))
        for k in range(order, N_COEF):
            scale = factorial(k) / factorial(k - order)
            term = scale * tau ** (k - order)
            out += self.coefficients[idx, :, k] * term[..., None]
        return out / (h ** order)[..., None]

    def position(self, t) -> np.ndarray:
        return self.derivative(t, 0)

    def velocity(self, t) -> np.ndarray:
        return self.derivative(t, 1)

    def snap_cost(self) -> float:
        """Exact integral of the squared 4th derivative over the full span."""
        total = 0.0
        for s in range(4):
            h = self.durations[s]
            for axis in range(2):
                c = self.coefficients[s, axis]
                total += float(c @ _SNAP_GRAM @ c) / h ** 7
        return total

    def dump(self) -> str:
        """Debug text: one line per segment per axis, eight coefficients."""
        lines = []
        for s in range(4):
            for axis in range(2):
                lines.append(" ".join(repr(v) for v in self.coefficients[s, axis]))
        return "\n".join(lines) + "\n"


@dataclass
class SeparationResult:
    d_min: float
    t_star: float


def _constraint_system(times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Equality constraints A c = b for one axis; b columns filled by caller.

    Rows: segment-end positions (8), endpoint velocities (2), continuity of
    derivatives 1..4 at the three interior knots (12).
    """
    h = np.diff(times)
    n = 4 * N_COEF
    a = np.zeros((22, n))
    row = 0
    for s in range(4):
        a[row, s * N_COEF : (s + 1) * N_COEF] = _ROW_T0[0]
        a[row + 1, s * N_COEF : (s + 1) * N_COEF] = _ROW_T1[0]
        row += 2
    a[row, 0:N_COEF] = _ROW_T0[1] / h[0]
    a[row + 1, 3 * N_COEF : 4 * N_COEF] = _ROW_T1[1] / h[3]
    row += 2
    for knot in range(3):
        for order in range(1, SNAP_ORDER + 1):
            a[row, knot * N_COEF : (knot + 1) * N_COEF] = _ROW_T1[order] / h[knot] ** order
            a[row, (knot + 1) * N_COEF : (knot + 2) * N_COEF] = (
                -_ROW_T0[order] / h[knot + 1] ** order
            )
            row += 1
    cost = np.zeros((n, n))
    for s in range(4):
        block = slice(s * N_COEF, (s + 1) * N_COEF)
        cost[block, block] = _SNAP_GRAM / h[s] ** 7
    return a, cost


def fit_min_snap(schedule: WaypointSchedule) -> PolySpline:
    """Fit the snap-minimizing spline through a five-waypoint schedule.

    Positions are interpolated at every knot, the mission velocity is clamped
    at t1 and t5, and derivatives 1..4 are continuous at interior knots. The
    remaining freedom minimizes the snap integral; the equality-constrained
    quadratic program is solved by the null-space method, which tolerates the
    wide scale spread between the snap Gram blocks and the constraint rows.
    """
    times = schedule.times
    if not np.all(np.diff(times) > 0.0):
        raise ValueError("knot times must be strictly increasing")
    a, cost = _constraint_system(times)
    b = np.zeros((22, 2))
    for s in range(4):
        b[2 * s] = schedule.positions[s]
        b[2 * s + 1] = schedule.positions[s + 1]
    b[8] = schedule.velocities[0]
    b[9] = schedule.velocities[4]

    # row equilibration: the reaction segment can be orders of magnitude
    # shorter than the maneuver segments, which skews derivative rows badly
    row_scale = np.max(np.abs(a), axis=1)[:, None]
    a = a / row_scale
    b = b / row_scale

    u, sing, vt = np.linalg.svd(a, full_matrices=True)
    if sing[-1] < 1e-12 * sing[0]:
        raise ValueError("degenerate knot layout: constraint system is singular")
    # particular solution and null-space basis from the same SVD
    particular = vt[:22].T @ ((u.T @ b) / sing[:, None])
    null = vt[22:].T
    reduced = null.T @ cost @ null
    rhs = -(null.T @ (cost @ particular))
    # lstsq tolerates the rank collapse of the snap metric on wildly
    # mismatched segment durations (cost blocks scale like h^-7)
    coeffs = particular + null @ np.linalg.lstsq(reduced, rhs, rcond=None)[0]
    # one refinement pass keeps waypoint interpolation at the 1e-9 m level
    coeffs += vt[:22].T @ ((u.T @ (b - a @ coeffs)) / sing[:, None])
    return PolySpline(
        knots=times.copy(),
        coefficients=np.transpose(coeffs.reshape(4, N_COEF, 2), (0, 2, 1)),
    )


def _segment_min_candidates(diff_coeffs: np.ndarray) -> np.ndarray:
    """Interior critical points (tau in (0,1)) of |diff(tau)|^2 for one segment."""
    sq = np.zeros(2 * N_COEF - 1)
    for axis in range(2):
        sq += np.convolve(diff_coeffs[axis], diff_coeffs[axis])
    dsq = sq[1:] * np.arange(1, sq.size)
    if not np.any(np.abs(dsq) > 0.0):
        return np.empty(0)
    # np.roots expects the highest power first
    roots = np.roots(dsq[::-1])
    real = roots[np.abs(roots.imag) < 1e-8].real
    real = real[(real > 0.0) & (real < 1.0)]
    if real.size == 0:
        return real
    ddsq = dsq[1:] * np.arange(1, dsq.size)
    for _ in range(3):  # Newton polish on the derivative of the squared distance
        num = np.polyval(dsq[::-1], real)
        den = np.polyval(ddsq[::-1], real)
        safe = np.abs(den) > 1e-30
        real = np.where(safe, real - num / np.where(safe, den, 1.0), real)
        real = np.clip(real, 0.0, 1.0)
    return real


def pairwise_min_distance(sa: PolySpline, sb: PolySpline) -> SeparationResult:
    """Global minimum separation between two splines sharing knot times."""
    if not np.allclose(sa.knots, sb.knots, rtol=0.0, atol=1e-12):
        raise ValueError("splines must share knot times")
    best_d2 = np.inf
    best_t = sa.knots[0]
    for s in range(4):
        diff = sa.coefficients[s] - sb.coefficients[s]
        taus = np.concatenate((np.array([0.0, 1.0]), _segment_min_candidates(diff)))
        dx = np.polyval(diff[0][::-1], taus)
        dy = np.polyval(diff[1][::-1], taus)
        d2 = dx * dx + dy * dy
        k = int(np.argmin(d2))
        if d2[k] < best_d2:
            best_d2 = d2[k]
            best_t = sa.knots[s] + taus[k] * (sa.knots[s + 1] - sa.knots[s])
    return SeparationResult(d_min=float(np.sqrt(max(best_d2, 0.0))), t_star=float(best_t))


def executed_min_distance(
    schedule_a: WaypointSchedule, schedule_b: WaypointSchedule
) -> SeparationResult:
    """Fit both schedules and return their minimum separation."""
    return pairwise_min_distance(fit_min_snap(schedule_a), fit_min_snap(schedule_b))


def straight_line_spline(state: UavState, times: np.ndarray) -> PolySpline:
    """Constant-velocity spline over the given knots (reference/testing aid)."""
    times = np.asarray(times, dtype=float)
    coeffs = np.zeros((4, 2, N_COEF))
    for s in range(4):
        h = times[s + 1] - times[s]
        start = state.position_at(times[s] - times[0])
        coeffs[s, :, 0] = start
        coeffs[s, :, 1] = state.velocity * h
    return PolySpline(knots=times.copy(), coefficients=coeffs)


def straight_pair_separation(a: UavState, b: UavState, times: np.ndarray) -> SeparationResult:
    """Closed-form minimum separation of two unperturbed vehicles over the knots."""
    pred = closest_approach(a, b, float(times[0]), float(times[-1]))
    return SeparationResult(d_min=pred.d_min, t_star=pred.t_min)
