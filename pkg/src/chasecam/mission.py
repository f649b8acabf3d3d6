"""Receding-horizon chasing loop: the simulator that ties prediction,
corridor preplanning and smooth planning together.

Each tick advances the target (scripted or operator-driven), maintains the
observation buffer, accumulates prediction error, replans when the error
tolerance is exceeded / no plan exists / the current plan is mostly
consumed, and moves the chaser along the planned polynomial (ideal
tracking).  Everything is deterministic for a fixed configuration.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .prediction import ObservationBuffer, PredictionParams, TargetPrediction, predict
from .preplan import (Corridor, InfeasiblePlanError, PreplanParams, ViewpointSkeleton,
                      plan_corridor_sequence)
from .qp import QpInfeasibleError, QpSolverError
from .smooth import ChaseTrajectory, SmoothParams, plan_smooth, plan_yaw
from .visibility import is_visible, visibility_score
from .world import EsdfGrid


class ConfigurationError(ValueError):
    """Start state violates the mission preconditions."""


@dataclass(frozen=True)
class MissionParams:
    horizon: float = 4.0          # H
    tick_dt: float = 0.05
    accum_err_tol: float = 1.0    # squared-error accumulation threshold
    via_tol: float = 0.4          # target-reached-goal distance
    obs_period: float = 1.0       # seconds between stored observations (H / N_o)
    time_limit: float = 120.0
    replan_fraction: float = 0.75  # replan when this much of the plan is consumed

    def __post_init__(self):
        if self.horizon <= 0 or self.tick_dt <= 0 or self.obs_period <= 0:
            raise ValueError("horizon, tick_dt and obs_period must be > 0")
        if not 0 < self.replan_fraction <= 1:
            raise ValueError("replan_fraction must be in (0, 1]")


@dataclass
class TargetScript:
    """Polyline the target follows at per-leg constant speed; it stops at
    the last waypoint.  hide flags annotate abrupt-maneuver legs (metadata
    for analysis; the geometry itself produces the hiding)."""

    waypoints: np.ndarray          # (M, 3)
    speeds: np.ndarray             # (M-1,)
    hide: np.ndarray | None = None

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, float)
        self.speeds = np.asarray(self.speeds, float)
        if self.waypoints.shape[0] < 2:
            raise ValueError("script needs at least 2 waypoints")
        if self.speeds.shape[0] != self.waypoints.shape[0] - 1:
            raise ValueError("need one speed per leg")
        if np.any(self.speeds <= 0):
            raise ValueError("speeds must be > 0")
        if self.hide is None:
            self.hide = np.zeros(self.speeds.shape[0], bool)
        else:
            self.hide = np.asarray(self.hide, bool)
        legs = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)
        self._leg_times = legs / self.speeds
        self._cum = np.concatenate([[0.0], np.cumsum(self._leg_times)])

    @property
    def duration(self) -> float:
        return float(self._cum[-1])

    def position(self, t: float) -> np.ndarray:
        if t <= 0:
            return self.waypoints[0].copy()
        if t >= self._cum[-1]:
            return self.waypoints[-1].copy()
        leg = int(np.searchsorted(self._cum, t, side="right") - 1)
        leg = min(leg, len(self._leg_times) - 1)
        f = (t - self._cum[leg]) / self._leg_times[leg]
        return (1 - f) * self.waypoints[leg] + f * self.waypoints[leg + 1]


@dataclass
class TickRecord:
    t: float
    phi_target: float
    psi: float
    visible: bool
    step_length: float


@dataclass
class ReplanEvent:
    t: float
    reason: str                   # "initial" | "accum_err" | "horizon" | "expired"
    ok: bool
    detail: str = ""
    predict_ms: float = 0.0
    preplan_ms: float = 0.0
    smooth_ms: float = 0.0

    @property
    def total_ms(self) -> float:
        return self.predict_ms + self.preplan_ms + self.smooth_ms


@dataclass
class MetricsLog:
    records: list[TickRecord] = field(default_factory=list)
    events: list[ReplanEvent] = field(default_factory=list)
    completed: bool = False

    def aggregates(self, tick_dt: float) -> dict:
        psi = np.array([r.psi for r in self.records]) if self.records else np.zeros(0)
        vis = np.array([r.visible for r in self.records], bool) if self.records else np.zeros(0, bool)
        steps = np.array([r.step_length for r in self.records]) if self.records else np.zeros(0)
        plans = [e for e in self.events if e.ok]
        return {
            "avg_psi": float(psi.mean()) if psi.size else float("nan"),
            "occlusion_duration": float(tick_dt * np.count_nonzero(~vis)),
            "flight_distance": float(steps.sum()),
            "ticks": len(self.records),
            "completed": self.completed,
            "replans": len(plans),
            "replan_failures": len(self.events) - len(plans),
            "replan_ms_median": float(np.median([e.total_ms for e in plans])) if plans else 0.0,
        }


@dataclass
class WorldState:
    t: float
    target_pos: np.ndarray
    chaser_pos: np.ndarray
    chaser_vel: np.ndarray
    chaser_acc: np.ndarray
    yaw: float
    active_via_index: int = 0
    prediction: TargetPrediction | None = None
    trajectory: ChaseTrajectory | None = None
    skeleton: ViewpointSkeleton | None = None
    corridors: list[Corridor] | None = None
    accum_err: float = 0.0
    plan_t0: float = float("-inf")
    last_obs_t: float = float("-inf")
    mission_complete: bool = False
    replanning: bool = False
    infeasible: bool = False


class Mission:
    """Owns the immutable world + parameters; ticks WorldState forward."""

    def __init__(self, esdf: EsdfGrid, via_points, script: TargetScript | None,
                 start_pos, start_yaw: float = 0.0,
                 prediction_params: PredictionParams | None = None,
                 preplan_params: PreplanParams | None = None,
                 smooth_params: SmoothParams | None = None,
                 mission_params: MissionParams | None = None):
        self.esdf = esdf
        self.via_points = np.asarray(via_points, float).reshape(-1, 3)
        if self.via_points.shape[0] < 1:
            raise ConfigurationError("need at least one via-point")
        self.script = script
        self.start_pos = np.asarray(start_pos, float)
        self.start_yaw = float(start_yaw)
        self.pred_params = prediction_params or PredictionParams()
        self.preplan_params = preplan_params or PreplanParams()
        self.smooth_params = smooth_params or SmoothParams()
        self.params = mission_params or MissionParams()
        self.obs = ObservationBuffer(capacity=self.pred_params.n_obs)
        self.log = MetricsLog()

    # -- lifecycle ---------------------------------------------------------

    def initial_state(self) -> WorldState:
        target0 = (self.script.position(0.0) if self.script is not None
                   else self.via_points[0].copy())
        if not self.esdf.grid.in_bounds(self.start_pos):
            raise ConfigurationError("chaser start outside the map")
        if self.esdf.phi_at(self.start_pos) < self.preplan_params.r_corridor:
            raise ConfigurationError("chaser start in collision")
        if not is_visible(self.esdf.grid, self.start_pos, target0):
            raise ConfigurationError("target not visible from the chaser start")
        rel = target0 - self.start_pos
        yaw = float(np.arctan2(rel[1], rel[0])) if np.hypot(rel[0], rel[1]) > 1e-9 else self.start_yaw
        state = WorldState(t=0.0, target_pos=target0,
                           chaser_pos=self.start_pos.copy(),
                           chaser_vel=np.zeros(3), chaser_acc=np.zeros(3), yaw=yaw)
        self._observe(state)
        return state

    def _observe(self, state: WorldState) -> None:
        if state.t - state.last_obs_t >= self.params.obs_period - 1e-9:
            self.obs.push(state.t, state.target_pos)
            state.last_obs_t = state.t

    # -- replanning --------------------------------------------------------

    def _replan(self, state: WorldState, reason: str) -> None:
        p = self.params
        ev = ReplanEvent(t=state.t, reason=reason, ok=False)
        goal = self.via_points[min(state.active_via_index, self.via_points.shape[0] - 1)]
        try:
            t0 = time.perf_counter()
            pred = predict(self.obs, goal, self.esdf, self.pred_params)
            t1 = time.perf_counter()
            n = self.preplan_params.n_layers
            times = state.t + p.horizon * np.arange(n + 1) / n
            targets = [pred.sample(tk) for tk in times[1:]]
            start_target = pred.sample(max(state.t, pred.knot_times[0]))
            skeleton, corridors, _ = plan_corridor_sequence(
                self.esdf, state.chaser_pos, start_target, targets, times,
                self.preplan_params)
            t2 = time.perf_counter()
            traj, _ = plan_smooth(corridors, skeleton,
                                  (state.chaser_pos, state.chaser_vel, state.chaser_acc),
                                  self.smooth_params)
            yaw_stride = max(p.tick_dt, p.horizon / 80.0)
            traj = plan_yaw(traj, pred, yaw_stride, initial_yaw=state.yaw)
            t3 = time.perf_counter()
            ev.predict_ms = (t1 - t0) * 1e3
            ev.preplan_ms = (t2 - t1) * 1e3
            ev.smooth_ms = (t3 - t2) * 1e3
            ev.ok = True
            state.prediction = pred
            state.trajectory = traj
            state.skeleton = skeleton
            state.corridors = corridors
            state.plan_t0 = state.t
            state.accum_err = 0.0
            state.infeasible = False
        except (InfeasiblePlanError, QpInfeasibleError, QpSolverError) as e:
            ev.detail = str(e)
            state.trajectory = None
            state.skeleton = None
            state.corridors = None
            state.infeasible = True
        self.log.events.append(ev)

    def _needs_replan(self, state: WorldState) -> str | None:
        if state.trajectory is None:
            return "initial" if state.plan_t0 == float("-inf") else "retry"
        if state.accum_err > self.params.accum_err_tol:
            return "accum_err"
        if state.t >= state.trajectory.t_end:
            return "expired"
        if state.t - state.plan_t0 >= self.params.replan_fraction * self.params.horizon:
            return "horizon"
        return None

    # -- simulation --------------------------------------------------------

    def tick(self, state: WorldState, command=None) -> WorldState:
        """One simulation step.  `command` (vx, vy) overrides the script
        (operator mode); motion into occupied voxels is rejected."""
        p = self.params
        state = replace(state)
        t_new = state.t + p.tick_dt

        if command is not None:
            vx, vy = command
            cand = state.target_pos + np.array([vx, vy, 0.0]) * p.tick_dt
            if self.esdf.grid.in_bounds(cand) and self.esdf.phi_at(cand) > 0.0:
                state.target_pos = cand
        elif self.script is not None:
            state.target_pos = self.script.position(t_new)
        state.t = t_new

        self._observe(state)

        if state.prediction is not None:
            err = np.linalg.norm(state.prediction.sample(t_new) - state.target_pos)
            state.accum_err += float(err ** 2)

        state.replanning = False
        reason = self._needs_replan(state)
        if reason is not None and self.obs.full:
            state.replanning = True
            self._replan(state, reason)

        prev_pos = state.chaser_pos.copy()
        traj = state.trajectory
        if traj is not None:
            tau = min(max(t_new, traj.t0), traj.t_end)
            state.chaser_pos = traj.evaluate(tau, 0)
            state.chaser_vel = traj.evaluate(tau, 1)
            state.chaser_acc = traj.evaluate(tau, 2)
            state.yaw = traj.yaw_at(tau)
        else:
            state.chaser_vel = np.zeros(3)
            state.chaser_acc = np.zeros(3)

        goal = self.via_points[min(state.active_via_index, self.via_points.shape[0] - 1)]
        if (not state.mission_complete
                and np.linalg.norm(state.target_pos - goal) < p.via_tol):
            state.active_via_index += 1
            if state.active_via_index >= self.via_points.shape[0]:
                state.mission_complete = True

        step = float(np.linalg.norm(state.chaser_pos - prev_pos))
        visible = is_visible(self.esdf.grid, state.chaser_pos, state.target_pos)
        self.log.records.append(TickRecord(
            t=t_new,
            phi_target=self.esdf.phi_at(state.target_pos),
            psi=visibility_score(self.esdf, state.chaser_pos, state.target_pos),
            visible=visible,
            step_length=step))
        return state

    def run(self) -> tuple[MetricsLog, WorldState]:
        """Headless mission: tick until the last via-point or the time limit."""
        state = self.initial_state()
        n_max = int(np.ceil(self.params.time_limit / self.params.tick_dt))
        for _ in range(n_max):
            state = self.tick(state)
            if state.mission_complete:
                break
        self.log.completed = state.mission_complete
        return self.log, state


def compute_metrics(records: list[TickRecord], tick_dt: float) -> dict:
    """Aggregate the per-tick log (kept independent for cross-checking)."""
    log = MetricsLog(records=list(records))
    return log.aggregates(tick_dt)
