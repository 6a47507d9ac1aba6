"""Receding-horizon planning loop: window references, warm starts, MAP solves,
and the closed-loop simulation that drives the plant with the first control.

Each step builds a fresh factor graph over the horizon window, solves it from
the shifted previous solution, applies the first control to the RK4 plant, and
repeats until the lap closes.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .factors import (TAIL_MARGIN_TOTAL, FactorWeights, ReferenceWindow,
                      StateBounds, _curvature_geometry, assemble_horizon_factors,
                      curvature_factor, limit_factor, obstacle_factor,
                      reference_factor, velocity_factor)
from .fgcore import (Factor, FactorGraph, ResidualDomainError, SolveStats,
                     SolverConfig, Values, VariableKey, solve_lm)
from .metrics import LapMetrics, lap_metrics
from .track import (ObstacleCostParams, SdfGrid, SdfQueryError, Track,
                    build_sdf, query_sdf)
from .vehicle import (ControlInput, VehicleParams, VehicleState,
                      continuous_jacobians, dynamics_raw, implicit_step)

__all__ = [
    "PlannerConfig",
    "PlanStepResult",
    "LapResult",
    "BoundsAudit",
    "PlanStepError",
    "PlannerAbort",
    "SpeedProfile",
    "window_keys",
    "select_reference_window",
    "warm_start",
    "plan_step",
    "run_lap",
    "audit_bounds",
]

logger = logging.getLogger(__name__)


class PlanStepError(Exception):
    """A single horizon solve could not be evaluated (e.g. off-field query)."""


class PlannerAbort(Exception):
    """Closed-loop run left the field; carries the partial lap for dumping."""

    def __init__(self, message: str, partial: "LapResult"):
        super().__init__(message)
        self.partial = partial


def _planner_solver_defaults() -> SolverConfig:
    # Operational settings for the receding-horizon loop: each problem is a
    # small perturbation of the last, so a tight iteration budget and an
    # earlier plateau stop trade negligible objective polish for solve rate.
    return SolverConfig(max_iterations=30, min_relative_decrease=2e-2)


@dataclass
class PlannerConfig:
    horizon: int = 40
    ts: float = 0.02
    v_des: float = 3.0
    decel_steps: int = 10
    weights: FactorWeights = field(default_factory=FactorWeights)
    bounds: StateBounds = field(default_factory=StateBounds)
    solver: SolverConfig = field(default_factory=_planner_solver_defaults)
    obstacle: ObstacleCostParams = field(default_factory=ObstacleCostParams)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    include_curvature: bool = True
    max_steps: int | None = None
    # The measured state is exact by construction, so its anchor must outweigh
    # the dynamics stiffness or the solver keeps the old plan and shifts the
    # anchor instead, severing the feedback loop.
    sigma_measurement: float = 1e-6

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.ts <= 0:
            raise ValueError("ts must be positive")
        if self.v_des <= 0:
            raise ValueError("v_des must be positive")
        if self.decel_steps < 0:
            raise ValueError("decel_steps must be nonnegative")


@dataclass
class PlanStepResult:
    applied_control: ControlInput
    predicted: list[VehicleState]
    stats: SolveStats
    solution: Values


@dataclass
class LapResult:
    states: list[VehicleState]
    controls: list[ControlInput]
    per_step_stats: list[SolveStats]
    ts: float
    completed: bool
    metrics: LapMetrics | None = None


@dataclass
class BoundsAudit:
    """Per-step box-limit compliance of the closed loop (logged, never hidden)."""

    total: int
    exact_ok: int
    buffered_ok: int
    worst: dict[str, float]

    @property
    def exact_fraction(self) -> float:
        return self.exact_ok / self.total if self.total else 1.0

    @property
    def buffered_fraction(self) -> float:
        return self.buffered_ok / self.total if self.total else 1.0


def window_keys(horizon: int) -> tuple[list[VariableKey], list[VariableKey]]:
    """Canonical variable keys of one window: states 0..n, controls after."""
    states = [VariableKey(k, 6) for k in range(horizon + 1)]
    controls = [VariableKey(horizon + 1 + k, 2) for k in range(horizon)]
    return states, controls


def _runout_length(config: PlannerConfig) -> float:
    return max(config.decel_steps, 1) * config.v_des * config.ts


# Speed-profile constants.  The target speed is the configured cruise speed
# nearly everywhere — speed through corners then emerges from the balance of
# the soft factors, which is where the minimum-curvature line pays off — with
# only a loose lateral-acceleration cap so the targets never demand the
# physically impossible in the sharpest bends.
LAT_ACCEL_MAX = 8.0
LONG_ACCEL = 2.0
BRAKE_ACCEL = 2.5
LAUNCH_FLOOR = 0.3


class SpeedProfile:
    """Achievable target speed as a function of arc length.

    Curvature-capped cruise speed with forward (acceleration) and backward
    (braking) feasibility passes — the usual trapezoidal racing profile.  The
    launch from standstill lives at station zero; closed tracks wrap the
    passes around the loop.
    """

    def __init__(self, track: Track, v_des: float,
                 runout: float = 0.0,
                 lat_accel: float = LAT_ACCEL_MAX,
                 accel: float = LONG_ACCEL,
                 brake: float = BRAKE_ACCEL):
        pts = track.centerline
        m = pts.shape[0]
        if track.closed:
            prev = np.roll(pts, 1, axis=0)
            nxt = np.roll(pts, -1, axis=0)
        else:
            prev = np.vstack([pts[0], pts[:-1]])
            nxt = np.vstack([pts[1:], pts[-1]])
        e1 = pts - prev
        e2 = nxt - pts
        chord = nxt - prev
        denom = (np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
                 * np.linalg.norm(chord, axis=1))
        cross = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        kappa = np.where(denom > 1e-15, 2.0 * cross / denom, 0.0)

        cap = np.minimum(v_des, np.sqrt(lat_accel / np.maximum(kappa, 1e-9)))
        stations = np.array([track.station_of(i) for i in range(m)])
        seg = np.diff(np.append(stations, track.length))

        v = cap.copy()
        laps = 2 if track.closed else 1
        for _ in range(laps):
            for i in range(m):  # forward: acceleration limit
                j = (i + 1) % m
                if not track.closed and j == 0:
                    break
                v[j] = min(v[j], math.sqrt(v[i] ** 2 + 2 * accel * seg[i]))
            for i in range(m - 1, -1, -1):  # backward: braking limit
                j = (i + 1) % m
                if not track.closed and i == m - 1:
                    continue
                v[i] = min(v[i], math.sqrt(v[j] ** 2 + 2 * brake * seg[i]))
        self._stations = stations
        self._speeds = np.maximum(v, LAUNCH_FLOOR)
        self._length = track.length
        self._closed = track.closed
        self._v_des = v_des
        self._runout = runout
        self._accel = accel

    def speed_at(self, station: float) -> float:
        """Target speed, including the standstill launch and open-track taper."""
        s_track = station % self._length if self._closed else min(max(station, 0.0),
                                                                  self._length)
        v = float(np.interp(s_track, np.append(self._stations, self._length),
                            np.append(self._speeds, self._speeds[0] if self._closed
                                      else self._speeds[-1])))
        v = min(v, max(LAUNCH_FLOOR,
                       math.sqrt(2.0 * self._accel * max(station, 0.0))))
        if not self._closed and station > self._length and self._runout > 0:
            v = min(v, self._v_des * max(0.0, 1.0 - (station - self._length)
                                         / self._runout))
        return v


def select_reference_window(track: Track, current_state: VehicleState,
                            n: int, v_des: float, ts: float,
                            decel_steps: int = 10,
                            progress: float | None = None,
                            profile: SpeedProfile | None = None) -> ReferenceWindow:
    """Targets for the next n+1 steps starting at the projected station.

    Speed targets are a pure function of (unwrapped) arc length, so the
    window is shift-invariant: a shifted previous solution still matches its
    references at cruise.  Positions past an open track's finish extrapolate
    along the end tangent over the deceleration run-out.
    """
    s = track.project((current_state.x, current_state.y))
    unwrapped = s if progress is None else progress
    length = track.length
    runout = max(decel_steps, 1) * v_des * ts
    if profile is None:
        profile = SpeedProfile(track, v_des, runout=runout)

    end_tan = None if track.closed else track.tangent_at(length)
    end_pt = None if track.closed else track.point_at(length)

    positions = np.empty((n + 1, 2))
    v_targets = np.empty((n + 1, 2))
    station = unwrapped
    for k in range(n + 1):
        if k > 0:
            station += profile.speed_at(station) * ts
        pos_station = s + (station - unwrapped)
        if track.closed or pos_station <= length:
            positions[k] = track.point_at(pos_station)
        else:
            positions[k] = end_pt + min(pos_station - length, runout) * end_tan
        v_targets[k] = (profile.speed_at(station), 0.0)
    return ReferenceWindow(positions=positions, v_des=v_targets)


def warm_start(previous: Values | None, current_state: VehicleState,
               state_keys: list[VariableKey], control_keys: list[VariableKey],
               reference: ReferenceWindow, ts: float,
               params: VehicleParams | None = None) -> Values:
    """Initial values: the shifted previous solution, or the reference itself.

    The cold start places states on the reference window (ramped speeds,
    tangent headings, path yaw rates) with zero controls; warm calls shift the
    previous solution one step, repeat the tail control, and roll the tail
    state forward.  Either way the first state block is the measured state.
    """
    n = len(control_keys)
    params = params or VehicleParams()
    values = Values()
    if previous is not None:
        for k in range(n):
            values.set(state_keys[k], previous[state_keys[k + 1]])
        for k in range(n - 1):
            values.set(control_keys[k], previous[control_keys[k + 1]])
        # extrapolate the tail through the plant map under a feedforward
        # control that follows the reference arc.  Duplicating the terminal
        # state leaves a full-step residual on the last dynamics factor, and
        # rolling with the (weakly determined) previous terminal control tends
        # to poke the tail out of the corridor; both stall the next solve.
        tail = previous[state_keys[n]]
        u_tail = _tail_feedforward(tail, params)
        values.set(control_keys[n - 1], u_tail)
        values.set(state_keys[n], implicit_step(tail, u_tail, params, ts))
    else:
        headings = _unwrapped_headings(reference.positions, current_state.phi)
        for k in range(n + 1):
            omega = (headings[k + 1] - headings[k]) / ts if k < n else 0.0
            values.set(state_keys[k], np.array([
                reference.positions[k, 0], reference.positions[k, 1],
                reference.v_des[k, 0], reference.v_des[k, 1],
                headings[k], omega,
            ]))
        for k in range(n):
            values.set(control_keys[k], np.zeros(2))
    values.set(state_keys[0], current_state.as_array())
    return values


def _rollout_candidate(current_state: VehicleState,
                       reference: ReferenceWindow,
                       state_keys: list[VariableKey],
                       control_keys: list[VariableKey],
                       params: VehicleParams, ts: float,
                       bounds: StateBounds) -> Values:
    """Pure-pursuit rollout through the plant map: a second solve seed.

    The window posterior is multimodal: besides the racing optimum there is a
    stationary "hold position" mode whose basin captures degraded warm
    starts.  This candidate always sits in the moving basin.
    """
    n = len(control_keys)
    values = Values()
    theta = current_state.as_array().copy()
    values.set(state_keys[0], theta)
    for k in range(n):
        target = reference.positions[min(k + 4, n)]
        desired = math.atan2(target[1] - theta[1], target[0] - theta[0])
        herr = (desired - theta[4] + math.pi) % (2 * math.pi) - math.pi
        delta = min(max(1.2 * herr, bounds.u_min[0]), bounds.u_max[0])
        drive = max(params.Cm1 - params.Cm2 * theta[2], 1e-3)
        hold = (params.Cr0 + params.Cd * theta[2] ** 2) / drive
        d = bounds.u_max[1] if theta[2] < reference.v_des[k, 0] else hold
        u = np.array([delta, min(max(d, bounds.u_min[1]), bounds.u_max[1])])
        values.set(control_keys[k], u)
        theta = implicit_step(theta, u, params, ts)
        values.set(state_keys[k + 1], theta)
    return values


def _stagnant(solution: Values, state_keys: list[VariableKey],
              reference: ReferenceWindow) -> bool:
    """Window speeds far below the reference speeds: likely the parked mode."""
    mean_v = float(np.mean([solution[k][2] for k in state_keys]))
    mean_ref = float(np.mean(reference.v_des[:, 0]))
    return mean_ref > 2 * LAUNCH_FLOOR and mean_v < 0.5 * mean_ref


def _plan_near_wall(solution: Values, state_keys: list[VariableKey],
                    sdf: SdfGrid, epsilon: float) -> bool:
    """Any planned position inside half the safety margin counts as at risk."""
    for key in state_keys:
        th = solution[key]
        try:
            d, _ = query_sdf(sdf, (th[0], th[1]))
        except SdfQueryError:
            return True
        if d < 0.5 * epsilon:
            return True
    return False


def _tail_feedforward(tail_state: np.ndarray,
                      params: VehicleParams) -> np.ndarray:
    """Control that continues the tail state's own arc at constant speed."""
    vx = max(float(tail_state[2]), 0.0)
    speed = math.hypot(tail_state[2], tail_state[3])
    kappa = float(tail_state[5]) / max(speed, 0.1)
    delta = math.atan(kappa * (params.lf + params.lb))
    drive = max(params.Cm1 - params.Cm2 * vx, 1e-3)
    d = (params.Cr0 + params.Cd * vx * vx) / drive
    return np.array([min(max(delta, -0.4), 0.4), min(max(d, -0.1), 1.0)])


def _settle_tail(values: Values, state_keys: list[VariableKey],
                 control_keys: list[VariableKey], sdf: SdfGrid,
                 weights: FactorWeights, bounds: StateBounds,
                 reference: ReferenceWindow, params: VehicleParams,
                 ts: float, epsilon: float) -> None:
    """Pre-converge the freshly extended tail with a tiny local solve.

    The shifted warm start is interior-consistent, but its rolled tail is the
    one part no previous solve ever optimized; left raw it carries the whole
    warm-start residual and costs the full solver many sweeps every step.
    This solves the 8-dim (state, control) tail subproblem against its own
    factor bundle with the neighbours held fixed.
    """
    n = len(control_keys)
    mini = FactorGraph()
    kth = mini.add_variable(VariableKey(0, 6))
    ku = mini.add_variable(VariableKey(1, 2))
    prev2 = values[state_keys[n - 2]]
    prev1 = values[state_keys[n - 1]]

    def residual_dyn(v: Values) -> np.ndarray:
        nxt = v[kth]
        return nxt - prev1 - ts * dynamics_raw(nxt, v[ku], params)

    def jacobians_dyn(v: Values) -> list:
        a1, b1 = continuous_jacobians(v[kth], v[ku], params)
        return [np.eye(6) - ts * a1, -ts * b1]

    mini.add_factor(Factor((kth, ku), residual_dyn, jacobians_dyn,
                           weights.sigma_sys, "tail_sys"))
    mini.add_factor(reference_factor(kth, reference.positions[n],
                                     weights.sigma_ref, "tail_ref"))
    mini.add_factor(velocity_factor(kth, reference.v_des[n],
                                    weights.sigma_vel, "tail_vel"))
    mini.add_factor(limit_factor(kth, bounds.r_min, bounds.r_max,
                                 weights.sigma_rlim, block=(4, 6), label="tail_rlim"))
    mini.add_factor(limit_factor(ku, bounds.u_min, bounds.u_max,
                                 weights.sigma_ulim, label="tail_ulim"))
    mini.add_factor(obstacle_factor(kth, sdf, epsilon + TAIL_MARGIN_TOTAL,
                                    weights.sigma_obs, "tail_obs"))

    def residual_curv(v: Values) -> np.ndarray:
        geo = _curvature_geometry(prev2, prev1, v[kth])
        return np.zeros(2) if geo is None else geo[0]

    def jacobians_curv(v: Values) -> list:
        geo = _curvature_geometry(prev2, prev1, v[kth])
        J = np.zeros((2, 6))
        if geo is not None:
            J[:, :2] = geo[2]
        return [J]

    mini.add_factor(Factor((kth,), residual_curv, jacobians_curv,
                           weights.sigma_curv, "tail_curv"))

    init = Values()
    init.set(kth, values[state_keys[n]])
    init.set(ku, values[control_keys[n - 1]])
    try:
        solved, _ = solve_lm(mini, init, SolverConfig(max_iterations=10,
                                                      min_relative_decrease=1e-3))
    except ResidualDomainError:
        return
    values.set(state_keys[n], solved[kth])
    values.set(control_keys[n - 1], solved[ku])


def _unwrapped_headings(positions: np.ndarray, phi0: float) -> np.ndarray:
    """Tangent headings of a point sequence, continuous with phi0."""
    n = positions.shape[0]
    headings = np.empty(n)
    prev = phi0
    for k in range(n):
        a = positions[k]
        b = positions[k + 1] if k + 1 < n else positions[k]
        d = b - a
        if abs(d[0]) + abs(d[1]) < 1e-12:
            headings[k] = prev
            continue
        raw = math.atan2(d[1], d[0])
        headings[k] = raw + 2 * math.pi * round((prev - raw) / (2 * math.pi))
        prev = headings[k]
    return headings


def plan_step(config: PlannerConfig, track: Track, sdf: SdfGrid,
              current_state: VehicleState, warm: Values | None = None,
              progress: float | None = None,
              profile: SpeedProfile | None = None,
              lambda_init: float | None = None) -> PlanStepResult:
    """Solve one horizon window and return the control to apply now.

    `lambda_init` lets consecutive solves start the damping where the last
    one settled instead of re-discovering the efficient level every step.
    """
    t_begin = time.perf_counter()
    n = config.horizon
    state_keys, control_keys = window_keys(n)
    reference = select_reference_window(track, current_state, n, config.v_des,
                                        config.ts, config.decel_steps, progress,
                                        profile)

    # the window has reached the lap end once its last target hits the finish
    goal_mu = None
    if not track.closed:
        last = reference.positions[-1]
        if track.project(last) >= track.length - 1e-9:
            goal_mu = last

    initial = warm_start(warm, current_state, state_keys, control_keys,
                         reference, config.ts, config.vehicle)
    if warm is not None:
        _settle_tail(initial, state_keys, control_keys, sdf, config.weights,
                     config.bounds, reference, config.vehicle, config.ts,
                     config.obstacle.epsilon)

    def build_graph(weights: FactorWeights) -> FactorGraph:
        graph = FactorGraph()
        for key in state_keys + control_keys:
            graph.add_variable(key)
        for f in assemble_horizon_factors(
                state_keys, control_keys, sdf, weights, config.bounds, reference,
                config.vehicle, config.ts, config.obstacle.epsilon,
                start_state=current_state.as_array(), goal_mu=goal_mu,
                include_curvature=config.include_curvature,
                start_sigma=config.sigma_measurement):
            graph.add_factor(f)
        return graph

    solver_cfg = config.solver
    if lambda_init is not None:
        solver_cfg = replace(solver_cfg, lambda_init=min(max(lambda_init, 1e-9), 1.0))
    deep_cfg = replace(config.solver, max_iterations=100, min_relative_decrease=1e-3)
    try:
        graph = build_graph(config.weights)
        solution, stats = solve_lm(graph, initial, solver_cfg)
        if _stagnant(solution, state_keys, reference):
            candidate = _rollout_candidate(current_state, reference, state_keys,
                                           control_keys, config.vehicle,
                                           config.ts, config.bounds)
            alt, alt_stats = solve_lm(graph, candidate, config.solver)
            alt_stats.iterations += stats.iterations
            if alt_stats.final_objective < stats.final_objective:
                solution, stats = alt, alt_stats
        if _plan_near_wall(solution, state_keys, sdf, config.obstacle.epsilon):
            # the budgeted solve left the plan in the wall margin: corner-entry
            # braking negotiations need the full budget to stay feasible
            deep, deep_stats = solve_lm(graph, solution, deep_cfg)
            deep_stats.iterations += stats.iterations
            if deep_stats.final_objective < stats.final_objective:
                solution, stats = deep, deep_stats
    except SdfQueryError as exc:
        raise PlanStepError(f"horizon solve left the field: {exc}") from exc
    if not stats.converged:
        logger.warning("horizon solve did not converge in %d iterations "
                       "(objective %.3g)", stats.iterations, stats.final_objective)

    stats.wall_time = time.perf_counter() - t_begin
    predicted = [VehicleState.from_array(solution[k]) for k in state_keys]
    applied = ControlInput.from_array(solution[control_keys[0]])
    return PlanStepResult(applied_control=applied, predicted=predicted,
                          stats=stats, solution=solution)


def run_lap(config: PlannerConfig, track: Track,
            sdf: SdfGrid | None = None) -> LapResult:
    """Drive one closed-loop lap; returns states, controls, and metrics.

    Terminates when arc-length progress covers the track (closed) or the
    projection reaches the finish line (open); aborts with the partial
    trajectory if the plant ever leaves the field.
    """
    if sdf is None:
        sdf = build_sdf(track)
    length = track.length
    start_tan = track.tangent_at(0.0)
    state = VehicleState(x=float(track.centerline[0, 0]),
                         y=float(track.centerline[0, 1]),
                         phi=math.atan2(start_tan[1], start_tan[0]))

    max_steps = config.max_steps
    if max_steps is None:
        max_steps = max(int(math.ceil(length / (0.1 * config.v_des) / config.ts)), 200)

    result = LapResult(states=[state], controls=[], per_step_stats=[],
                       ts=config.ts, completed=False)
    warm: Values | None = None
    progress = 0.0
    s_prev = track.project((state.x, state.y))
    unwrapped = s_prev
    profile = SpeedProfile(track, config.v_des,
                           runout=max(config.decel_steps, 1) * config.v_des * config.ts)

    lam_carry: float | None = None
    for _ in range(max_steps):
        step = plan_step(config, track, sdf, state, warm, progress=unwrapped,
                         profile=profile, lambda_init=lam_carry)
        warm = step.solution
        lam_carry = step.stats.final_lambda
        result.controls.append(step.applied_control)
        result.per_step_stats.append(step.stats)

        state = VehicleState.from_array(
            implicit_step(state.as_array(), step.applied_control.as_array(),
                          config.vehicle, config.ts))
        result.states.append(state)

        if not sdf.contains((state.x, state.y)):
            result.metrics = lap_metrics(result)
            raise PlannerAbort(
                f"plant left the field at ({state.x:.3f}, {state.y:.3f}) "
                f"after {len(result.controls)} steps", result)

        s_raw = track.project((state.x, state.y))
        if track.closed:
            delta = (s_raw - s_prev + 0.5 * length) % length - 0.5 * length
            progress += delta
            s_prev = s_raw
            unwrapped = progress + track.project((result.states[0].x, result.states[0].y))
            if progress >= length:
                result.completed = True
                break
        else:
            unwrapped = s_raw
            if s_raw >= length - 1e-9:
                result.completed = True
                break

    result.metrics = lap_metrics(result)
    return result


def audit_bounds(result: LapResult, bounds: StateBounds,
                 buffer: float = 0.05) -> BoundsAudit:
    """Check every closed-loop step against the box limits.

    A step is exact when controls and the rotation/velocity components all sit
    inside their boxes; buffered allows each box inflated by `buffer` of its
    width on both sides.  Violations are logged.
    """
    def boxes(state: VehicleState, control: ControlInput):
        return (
            ("delta", control.delta, bounds.u_min[0], bounds.u_max[0]),
            ("d", control.d, bounds.u_min[1], bounds.u_max[1]),
            ("phi", state.phi, bounds.r_min[0], bounds.r_max[0]),
            ("omega", state.omega, bounds.r_min[1], bounds.r_max[1]),
            ("vx", state.vx, bounds.v_min[0], bounds.v_max[0]),
            ("vy", state.vy, bounds.v_min[1], bounds.v_max[1]),
        )

    total = len(result.controls)
    exact_ok = 0
    buffered_ok = 0
    worst: dict[str, float] = {}
    for j, (state, control) in enumerate(zip(result.states[1:], result.controls)):
        exact = True
        buffered = True
        for name, val, lo, hi in boxes(state, control):
            over = max(lo - val, val - hi, 0.0)
            if over > 0:
                exact = False
                worst[name] = max(worst.get(name, 0.0), over)
                if over > buffer * (hi - lo):
                    buffered = False
                    logger.warning("step %d: %s = %.4f outside [%g, %g] "
                                   "beyond the buffer", j, name, val, lo, hi)
        exact_ok += exact
        buffered_ok += buffered
    return BoundsAudit(total=total, exact_ok=exact_ok, buffered_ok=buffered_ok,
                       worst=worst)
