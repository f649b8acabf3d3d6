"""Smooth trajectory generation inside the chasing corridors.

The chaser position is a piecewise polynomial of order K per corridor
segment; coefficients minimize integrated squared jerk plus a weighted
deviation of the knot positions from the preplanned viewpoints, subject to
the initial state, C2 continuity and the corridor half-space constraints
sampled along each segment.  Yaw is planned afterwards to face the
predicted target.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .prediction import TargetPrediction
from .preplan import Corridor, ViewpointSkeleton
from .qp import QpProblem, QpSolution, solve_qp

INEQ_SHRINK = 1e-3  # half-space tightening against inter-sample excursions


@dataclass(frozen=True)
class SmoothParams:
    poly_order: int = 6           # K
    waypoint_weight: float = 0.5  # lambda
    samples_per_segment: int = 8  # corridor constraint discretization
    kkt_tol: float = 1e-6

    def __post_init__(self):
        if self.poly_order < 5:
            raise ValueError(f"poly_order must be >= 5, got {self.poly_order}")
        if self.waypoint_weight <= 0:
            raise ValueError("waypoint_weight must be > 0")
        if self.samples_per_segment < 2:
            raise ValueError("samples_per_segment must be >= 2")


@dataclass
class ChaseTrajectory:
    """Per-segment coefficient stacks over the local time (tau - t_{k-1})."""

    coeffs: np.ndarray   # (N, 3, K+1)
    knots: np.ndarray    # (N+1,)
    yaw_times: np.ndarray | None = None
    yaw_values: np.ndarray | None = None

    @property
    def t0(self) -> float:
        return float(self.knots[0])

    @property
    def t_end(self) -> float:
        return float(self.knots[-1])

    def segment_index(self, tau: float) -> int:
        """Active segment; knots evaluate via the left segment (right at t0)."""
        if tau < self.knots[0] - 1e-9 or tau > self.knots[-1] + 1e-9:
            raise ValueError(f"tau={tau} outside [{self.knots[0]}, {self.knots[-1]}]")
        k = int(np.searchsorted(self.knots, tau, side="left")) - 1
        return min(max(k, 0), self.coeffs.shape[0] - 1)

    def evaluate(self, tau: float, order: int = 0) -> np.ndarray:
        return evaluate_trajectory(self, tau, order)

    def yaw_at(self, tau: float) -> float:
        if self.yaw_times is None:
            return 0.0
        return float(np.interp(tau, self.yaw_times, self.yaw_values))


def poly_basis(s: float, order: int, k: int) -> np.ndarray:
    """Row of the order-th derivative of the monomial basis (1, s, .., s^k)."""
    row = np.zeros(k + 1)
    for i in range(order, k + 1):
        c = 1.0
        for j in range(order):
            c *= i - j
        row[i] = c * s ** (i - order)
    return row


def jerk_gram(duration: float, k: int) -> np.ndarray:
    """Gram matrix of the third-derivative basis on [0, duration]:
    integral of basis_3(s) basis_3(s)^T ds (closed form)."""
    Q = np.zeros((k + 1, k + 1))
    for i in range(3, k + 1):
        ci = i * (i - 1) * (i - 2)
        for j in range(3, k + 1):
            cj = j * (j - 1) * (j - 2)
            p = i + j - 5
            Q[i, j] = ci * cj * duration ** p / p
    return Q


def _var_index(seg: int, axis: int, i: int, k: int) -> int:
    return (seg * 3 + axis) * (k + 1) + i


def build_qp(corridors: list[Corridor], skeleton: ViewpointSkeleton,
             init: tuple, params: SmoothParams) -> QpProblem:
    """Assemble the jerk + viewpoint-deviation QP over segment-local
    polynomial coefficients.

    Equalities: initial position/velocity/acceleration and C2 continuity at
    interior knots.  Inequalities: each corridor's half-spaces at
    samples_per_segment equispaced times (endpoints inclusive), tightened by
    INEQ_SHRINK.
    """
    knots = skeleton.times
    n_seg = len(corridors)
    if n_seg != skeleton.points.shape[0] - 1:
        raise ValueError("corridors not aligned with skeleton segments")
    durations = np.diff(knots)
    if np.any(durations <= 0):
        raise ValueError(f"knots must be strictly increasing, got {knots}")
    k = params.poly_order
    ncoef = k + 1
    n = 3 * n_seg * ncoef

    P = np.zeros((n, n))
    q = np.zeros(n)
    const = 0.0

    for seg in range(n_seg):
        Q = jerk_gram(durations[seg], k)
        for axis in range(3):
            i0 = _var_index(seg, axis, 0, k)
            P[i0:i0 + ncoef, i0:i0 + ncoef] += 2.0 * Q

    lam = params.waypoint_weight
    for kk in range(1, n_seg + 1):
        seg = kk - 1
        e = poly_basis(durations[seg], 0, k)
        v = skeleton.points[kk]
        for axis in range(3):
            i0 = _var_index(seg, axis, 0, k)
            P[i0:i0 + ncoef, i0:i0 + ncoef] += 2.0 * lam * np.outer(e, e)
            q[i0:i0 + ncoef] += -2.0 * lam * v[axis] * e
            const += lam * v[axis] ** 2

    x0, v0, a0 = (np.asarray(u, float) for u in init)
    eq_rows = []
    eq_rhs = []
    for order, val in ((0, x0), (1, v0), (2, a0)):
        basis = poly_basis(0.0, order, k)
        for axis in range(3):
            row = np.zeros(n)
            i0 = _var_index(0, axis, 0, k)
            row[i0:i0 + ncoef] = basis
            eq_rows.append(row)
            eq_rhs.append(val[axis])
    for seg in range(n_seg - 1):
        for order in range(3):
            left = poly_basis(durations[seg], order, k)
            right = poly_basis(0.0, order, k)
            for axis in range(3):
                row = np.zeros(n)
                iL = _var_index(seg, axis, 0, k)
                iR = _var_index(seg + 1, axis, 0, k)
                row[iL:iL + ncoef] = left
                row[iR:iR + ncoef] -= right
                eq_rows.append(row)
                eq_rhs.append(0.0)

    # Side half-spaces are tightened against inter-sample excursions; the
    # end-cap planes pass exactly through the skeleton endpoints (the initial
    # state sits on corridor 1's rear face) and must stay unshrunk.  At a
    # shared knot the boxes of two collinear consecutive corridors pinch the
    # point exactly onto the shared face plane, removing the strict interior
    # every QP algorithm wants; since each box constraint holds on the OPEN
    # time interval, the end-knot face rows of non-final segments are
    # skipped (the next corridor's rear face covers that point).
    ineq_rows = []
    ineq_rhs = []
    m = params.samples_per_segment
    for seg, cor in enumerate(corridors):
        for si in range(m):
            s = durations[seg] * si / (m - 1)
            basis = poly_basis(s, 0, k)
            skip_faces = (si == m - 1) and (seg < n_seg - 1)
            for normal, offset, is_face in zip(cor.normals, cor.offsets, cor.face_mask):
                if is_face and skip_faces:
                    continue
                row = np.zeros(n)
                for axis in range(3):
                    i0 = _var_index(seg, axis, 0, k)
                    row[i0:i0 + ncoef] = normal[axis] * basis
                ineq_rows.append(row)
                ineq_rhs.append(offset if is_face else offset - INEQ_SHRINK)

    return QpProblem(P=P, q=q, const=const,
                     A=np.asarray(eq_rows), b=np.asarray(eq_rhs),
                     G=np.asarray(ineq_rows), h=np.asarray(ineq_rhs))


def _extract(solution: QpSolution, n_seg: int, k: int) -> np.ndarray:
    coeffs = np.empty((n_seg, 3, k + 1))
    for seg in range(n_seg):
        for axis in range(3):
            i0 = _var_index(seg, axis, 0, k)
            coeffs[seg, axis] = solution.x[i0:i0 + k + 1]
    return coeffs


def corridor_violation(traj: ChaseTrajectory, corridors: list[Corridor],
                       samples: int = 64) -> float:
    """Worst half-space violation over a dense per-segment sweep.

    Each box applies on its half-open time interval (the shared knot belongs
    to the next corridor), mirroring the constraint discretization."""
    worst = 0.0
    n_seg = len(corridors)
    for seg, cor in enumerate(corridors):
        ts = np.linspace(traj.knots[seg], traj.knots[seg + 1], samples)
        if seg < n_seg - 1:
            ts = ts[:-1]
        for t in ts:
            p = traj.evaluate(t, 0)
            worst = max(worst, float(np.max(cor.normals @ p - cor.offsets)))
    return worst


def plan_smooth(corridors: list[Corridor], skeleton: ViewpointSkeleton,
                init: tuple, params: SmoothParams) -> tuple[ChaseTrajectory, QpSolution]:
    """Build + solve; if the dense post-check finds an inter-sample
    excursion beyond the TRUE box (the shrink margin is exhausted), the
    constraint sampling is doubled once and re-solved."""
    qp = build_qp(corridors, skeleton, init, params)
    sol = solve_qp(qp, tol=params.kkt_tol)
    traj = ChaseTrajectory(coeffs=_extract(sol, len(corridors), params.poly_order),
                           knots=skeleton.times.copy())
    if corridor_violation(traj, corridors) > 1e-7:
        dense = SmoothParams(poly_order=params.poly_order,
                             waypoint_weight=params.waypoint_weight,
                             samples_per_segment=2 * params.samples_per_segment,
                             kkt_tol=params.kkt_tol)
        qp = build_qp(corridors, skeleton, init, dense)
        sol = solve_qp(qp, tol=params.kkt_tol)
        traj = ChaseTrajectory(coeffs=_extract(sol, len(corridors), params.poly_order),
                               knots=skeleton.times.copy())
    return traj, sol


def evaluate_trajectory(traj: ChaseTrajectory, tau: float, order: int = 0) -> np.ndarray:
    """Derivative of the active segment's polynomial at tau (local time)."""
    seg = traj.segment_index(tau)
    s = float(tau) - traj.knots[seg]
    k = traj.coeffs.shape[2] - 1
    basis = poly_basis(s, order, k)
    return traj.coeffs[seg] @ basis


def plan_yaw(traj: ChaseTrajectory, pred: TargetPrediction, stride: float,
             initial_yaw: float = 0.0) -> ChaseTrajectory:
    """Yaw profile heading toward the predicted target, unwrapped so there
    are no +-pi jumps; horizontally coincident samples hold the last yaw."""
    if stride <= 0:
        raise ValueError("stride must be > 0")
    times = np.arange(traj.t0, traj.t_end + stride * 0.5, stride)
    times[-1] = min(times[-1], traj.t_end)
    raw = np.empty(times.shape[0])
    prev = initial_yaw
    for i, t in enumerate(times):
        p_c = evaluate_trajectory(traj, t, 0)
        p_t = pred.sample(max(t, pred.knot_times[0]))
        dx = p_t[0] - p_c[0]
        dy = p_t[1] - p_c[1]
        if np.hypot(dx, dy) < 1e-9:
            raw[i] = prev
        else:
            raw[i] = np.arctan2(dy, dx)
            prev = raw[i]
    unwrapped = np.unwrap(raw)
    # keep the first sample near the handed-in yaw so replans don't spin
    shift = 2 * np.pi * np.round((initial_yaw - unwrapped[0]) / (2 * np.pi))
    unwrapped = unwrapped + shift
    traj.yaw_times = times
    traj.yaw_values = unwrapped
    return traj
