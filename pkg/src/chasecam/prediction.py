"""Target trajectory forecasting over a receding horizon.

A geometric path xi of N_T points is fit by covariant gradient descent:
a quadratic prior (recency-weighted observation fit + second differences +
goal pin) plus a nonconvex obstacle cost driven by the ESDF.  Times are then
allocated under a constant-speed assumption and the horizon trajectory is
the linear interpolant of the timed path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import EsdfGrid

GOAL_WEIGHT = 1.0e3  # quadratic pin of the last path point to the goal


class PredictionError(RuntimeError):
    """Degenerate prediction setup (singular prior, non-finite objective)."""


class StationaryTarget(Exception):
    """Target did not move during the observation window (v_avg == 0)."""

    def __init__(self, v_avg):
        super().__init__("target stationary during observation window")
        self.v_avg = v_avg


@dataclass
class ObservationBuffer:
    """Ring of the most recent target observations (strictly increasing t)."""

    capacity: int
    times: list[float] = field(default_factory=list)
    points: list[np.ndarray] = field(default_factory=list)

    def push(self, t: float, p) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError(f"observation time {t} not increasing (last {self.times[-1]})")
        self.times.append(float(t))
        self.points.append(np.asarray(p, float).copy())
        if len(self.times) > self.capacity:
            self.times.pop(0)
            self.points.pop(0)

    @property
    def full(self) -> bool:
        return len(self.times) == self.capacity

    def __len__(self):
        return len(self.times)

    def as_arrays(self):
        return np.asarray(self.times), np.asarray(self.points)


@dataclass(frozen=True)
class PredictionParams:
    gamma: float = 0.1        # recency weight on observation residuals
    rho: float = 0.2          # prior weight in the covariant objective
    n_obs: int = 4            # N_o: observations used for the fit
    n_total: int = 7          # N_T: total path points (observed + predicted)
    alpha: float = 5.0        # covariant step size (1/rho makes the empty-map step exact)
    max_iters: int = 50
    eps_obstacle: float = 0.5  # obstacle-cost influence band [m]
    converge_tol: float = 1e-9

    def __post_init__(self):
        if self.n_total <= self.n_obs:
            raise ValueError(f"n_total must exceed n_obs ({self.n_total} <= {self.n_obs})")
        if self.n_obs < 2:
            raise ValueError("n_obs must be >= 2")
        for name in ("gamma", "rho", "alpha", "eps_obstacle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class TargetPrediction:
    """Timed geometric path with a linear interpolant over the horizon."""

    xi: np.ndarray          # (N_T, 3)
    knot_times: np.ndarray  # (N_T,)
    goal: np.ndarray
    v_avg: float

    def sample(self, tau: float) -> np.ndarray:
        return sample_prediction(self, tau)

    def sample_many(self, taus) -> np.ndarray:
        return np.asarray([sample_prediction(self, t) for t in np.atleast_1d(taus)])


def obstacle_cost(esdf: EsdfGrid, p, eps: float):
    """CHOMP-style obstacle potential and its spatial gradient at p.

    c(phi) = -phi + eps/2            (phi < 0)
             (phi - eps)^2 / (2 eps) (0 <= phi <= eps)
             0                       (phi > eps)
    """
    p = np.asarray(p, float)
    phi = esdf.phi_at(p)
    if phi > eps:
        return 0.0, np.zeros(3)
    grad_phi = esdf.gradient_at(p)
    if phi < 0.0:
        return -phi + 0.5 * eps, -grad_phi
    dc = (phi - eps) / eps
    return (phi - eps) ** 2 / (2.0 * eps), dc * grad_phi


def path_obstacle_cost(esdf: EsdfGrid, xi: np.ndarray, eps: float):
    """Summed obstacle cost over the path and the stacked gradient."""
    total = 0.0
    grad = np.zeros_like(xi)
    for n in range(xi.shape[0]):
        c, g = obstacle_cost(esdf, xi[n], eps)
        total += c
        grad[n] = g
    return total, grad


def assemble_prior(obs: ObservationBuffer, goal, params: PredictionParams):
    """Stack the quadratic prior so that 0.5*||A xi - b||_F^2 equals
    recency-weighted observation fit + second differences + goal pin."""
    if not obs.full:
        raise PredictionError(f"observation buffer not full ({len(obs)}/{obs.capacity})")
    n_o = params.n_obs
    n_t = params.n_total
    if obs.capacity != n_o:
        raise PredictionError(f"buffer capacity {obs.capacity} != n_obs {n_o}")
    _, pts = obs.as_arrays()
    goal = np.asarray(goal, float)

    rows = n_o + (n_t - 2) + 1
    A = np.zeros((rows, n_t))
    b = np.zeros((rows, 3))
    r = 0
    for n in range(1, n_o + 1):
        w = np.sqrt(np.exp(params.gamma * n))
        A[r, n - 1] = w
        b[r] = w * pts[n - 1]
        r += 1
    for n in range(n_t - 2):
        A[r, n] = 1.0
        A[r, n + 1] = -2.0
        A[r, n + 2] = 1.0
        r += 1
    w = np.sqrt(GOAL_WEIGHT)
    A[r, n_t - 1] = w
    b[r] = w * goal
    return A, b


def prior_objective(A, b, xi) -> float:
    """0.5 * ||A xi - b||_F^2."""
    r = A @ xi - b
    return 0.5 * float(np.sum(r * r))


def covariant_objective(A, b, xi, esdf, params) -> float:
    """Standard-form objective: 0.5*rho*||A xi - b||^2 + f_obs(xi)."""
    f_obs, _ = path_obstacle_cost(esdf, xi, params.eps_obstacle)
    return params.rho * prior_objective(A, b, xi) + f_obs


def _initial_path(obs: ObservationBuffer, goal, params) -> np.ndarray:
    _, pts = obs.as_arrays()
    n_future = params.n_total - params.n_obs
    goal = np.asarray(goal, float)
    xi = np.empty((params.n_total, 3))
    xi[:params.n_obs] = pts
    last = pts[-1]
    for j in range(1, n_future + 1):
        xi[params.n_obs + j - 1] = last + (goal - last) * (j / n_future)
    return xi


def predict_path(obs: ObservationBuffer, goal, esdf: EsdfGrid, params: PredictionParams,
                 history: list | None = None) -> np.ndarray:
    """Covariant descent on the Eq.-(2)-style objective.

    Observed points start at the observations, future points on the straight
    line to the goal.  Steps that would increase the objective are retried
    with a halved step size, so the objective is non-increasing.  Passing a
    list as `history` collects the accepted objective values.
    """
    A, b = assemble_prior(obs, goal, params)
    AtA = A.T @ A
    Atb = A.T @ b
    try:
        AtA_inv = np.linalg.inv(AtA)
    except np.linalg.LinAlgError as e:
        raise PredictionError(f"singular prior system: {e}") from None

    xi = _initial_path(obs, goal, params)
    obj = covariant_objective(A, b, xi, esdf, params)
    if not np.isfinite(obj):
        raise PredictionError("non-finite initial objective")
    if history is not None:
        history.append(obj)

    for _ in range(params.max_iters):
        _, g_obs = path_obstacle_cost(esdf, xi, params.eps_obstacle)
        grad = params.rho * (AtA @ xi - Atb) + g_obs
        step = -params.alpha * (AtA_inv @ grad)
        alpha_scale = 1.0
        accepted = False
        for _ in range(25):
            trial = xi + alpha_scale * step
            trial_obj = covariant_objective(A, b, trial, esdf, params)
            if np.isfinite(trial_obj) and trial_obj <= obj:
                accepted = True
                break
            alpha_scale *= 0.5
        if not accepted:
            break
        decrease = obj - trial_obj
        xi = trial
        obj = trial_obj
        if history is not None:
            history.append(obj)
        if decrease < params.converge_tol:
            break
    return xi


def allocate_times(xi: np.ndarray, obs: ObservationBuffer) -> tuple[np.ndarray, float]:
    """Observation stamps for the fitted points, then constant-speed recursion
    at the observed average speed for the predicted points."""
    times, pts = obs.as_arrays()
    n_o = len(times)
    span = times[-1] - times[0]
    v_avg = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)) / span)
    knots = np.empty(xi.shape[0])
    knots[:n_o] = times
    if v_avg <= 0.0:
        raise StationaryTarget(v_avg)
    for n in range(n_o, xi.shape[0]):
        knots[n] = knots[n - 1] + np.linalg.norm(xi[n] - xi[n - 1]) / v_avg
    return knots, v_avg


def sample_prediction(pred: TargetPrediction, tau: float) -> np.ndarray:
    """Linear interpolation between the bracketing knots; clamps to the goal
    beyond the last knot (the target is assumed to wait there)."""
    t = pred.knot_times
    if tau < t[0] - 1e-9:
        raise ValueError(f"tau={tau} before first knot {t[0]}")
    if tau >= t[-1]:
        return pred.xi[-1].copy()
    n = int(np.searchsorted(t, tau, side="right") - 1)
    n = max(0, min(n, len(t) - 2))
    dt = t[n + 1] - t[n]
    if dt <= 0.0:
        return pred.xi[n + 1].copy()
    w = (tau - t[n]) / dt
    return (1.0 - w) * pred.xi[n] + w * pred.xi[n + 1]


def predict(obs: ObservationBuffer, goal, esdf: EsdfGrid, params: PredictionParams) -> TargetPrediction:
    """Full prediction: path fit + time allocation.  A stationary target
    yields a constant prediction at its last observed position."""
    goal = np.asarray(goal, float)
    try:
        xi = predict_path(obs, goal, esdf, params)
        knots, v_avg = allocate_times(xi, obs)
    except StationaryTarget:
        times, pts = obs.as_arrays()
        xi = np.tile(pts[-1], (2, 1))
        knots = np.array([times[0], times[-1]])
        return TargetPrediction(xi=xi, knot_times=knots, goal=goal, v_avg=0.0)
    return TargetPrediction(xi=xi, knot_times=knots, goal=goal, v_avg=v_avg)
