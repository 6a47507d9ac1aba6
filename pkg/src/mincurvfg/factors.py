"""Residual factors for the racing planner: priors, references, hinge limits,
discrete dynamics, boundary avoidance, and the three-point curvature term.

State blocks are 6-dim [x, y, vx, vy, phi, omega], control blocks 2-dim
[delta, d].  Each constructor returns a plain fgcore.Factor; Jacobians are
analytic throughout, with zero subgradients chosen at hinge kinks so interior
optima are untouched.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .fgcore import Factor, VariableKey, Values
from .track import SdfGrid, hinge_cost, query_sdf
from .vehicle import (AffineDiscreteModel, VehicleParams, continuous_jacobians,
                      dynamics_raw)

__all__ = [
    "FactorWeights",
    "StateBounds",
    "ReferenceWindow",
    "prior_position_factor",
    "state_prior_factor",
    "reference_factor",
    "velocity_factor",
    "limit_factor",
    "dynamics_factor",
    "discrete_dynamics_factor",
    "obstacle_factor",
    "curvature_factor",
    "assemble_horizon_factors",
]

logger = logging.getLogger(__name__)

# Below this leg length the curvature geometry is undefined and the factor
# goes inert.
CURVATURE_DEGENERACY_EPS = 1e-9

# Half-width of the quadratic blend that rounds hinge kinks.  The racing
# equilibrium sits exactly on these boundaries (throttle at launch, the wall
# margin on the racing line), and a discontinuous second derivative there
# makes the solver thrash; the blend only alters a +-w neighbourhood of the
# kink, so violations beyond w keep their exact linear residuals.
OBSTACLE_SMOOTHING = 0.005
LIMIT_SMOOTHING_FRACTION = 0.005

# Terminal conservatism: the last few window states get a growing extra
# safety margin.  The geometry at the window end is the least converged part
# of every receding-horizon solve, and letting it hug the wall as tightly as
# the applied head makes each shifted warm start start outside the margin.
TAIL_MARGIN_STEPS = 6
TAIL_MARGIN_TOTAL = 0.02


def _soft_hinge(v: float, w: float) -> tuple[float, float]:
    """C1-smoothed max(v, 0) and its derivative; exact outside |v| < w."""
    if v <= -w:
        return 0.0, 0.0
    if v >= w:
        return v, 1.0
    t = v + w
    return t * t / (4.0 * w), t / (2.0 * w)

_POS_SEL = np.zeros((2, 6))
_POS_SEL[0, 0] = 1.0
_POS_SEL[1, 1] = 1.0
_VEL_SEL = np.zeros((2, 6))
_VEL_SEL[0, 2] = 1.0
_VEL_SEL[1, 3] = 1.0
_EYE6 = np.eye(6)
_NEG_EYE6 = -np.eye(6)


@dataclass(frozen=True)
class FactorWeights:
    """Isotropic noise scales, one per factor family (smaller = stiffer)."""

    sigma_start_goal: float = 8e-4
    sigma_ref: float = 5.7e-2
    sigma_vel: float = 5.5e-2
    sigma_rlim: float = 1e-3
    sigma_ulim: float = 5e-6
    sigma_obs: float = 1e-4
    sigma_sys: float = 1e-5
    sigma_curv: float = 1e-2

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if val <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class StateBounds:
    """Soft box limits: r = (phi, omega), u = (delta, d), v = (vx, vy)."""

    r_min: tuple[float, float] = (-10.0, -7.0)
    r_max: tuple[float, float] = (10.0, 7.0)
    u_min: tuple[float, float] = (-0.4, -0.1)
    u_max: tuple[float, float] = (0.4, 1.0)
    v_min: tuple[float, float] = (-0.1, -2.0)
    v_max: tuple[float, float] = (4.0, 2.0)

    def __post_init__(self):
        for lo, hi, name in ((self.r_min, self.r_max, "r"),
                             (self.u_min, self.u_max, "u"),
                             (self.v_min, self.v_max, "v")):
            if not (lo[0] < hi[0] and lo[1] < hi[1]):
                raise ValueError(f"{name} bounds must satisfy min < max componentwise")


@dataclass
class ReferenceWindow:
    """Per-step targets over one horizon: positions and body-frame velocities."""

    positions: np.ndarray        # (n+1, 2)
    v_des: np.ndarray            # (n+1, 2), lateral component normally zero

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.v_des = np.asarray(self.v_des, dtype=float)
        if self.positions.shape != self.v_des.shape or self.positions.ndim != 2:
            raise ValueError("positions and v_des must both be (n+1, 2)")

    def __len__(self) -> int:
        return self.positions.shape[0]


def prior_position_factor(key: VariableKey, mu, sigma: float,
                          label: str = "prior_pos") -> Factor:
    """Pull the position block of a state toward a fixed point."""
    mu = np.asarray(mu, dtype=float)

    def residual(values: Values) -> np.ndarray:
        th = values[key]
        return np.array([th[0] - mu[0], th[1] - mu[1]])

    def jacobians(values: Values) -> list[np.ndarray]:
        return [_POS_SEL]

    return Factor((key,), residual, jacobians, sigma, label)


def state_prior_factor(key: VariableKey, theta_ref, sigma: float,
                       label: str = "prior_state") -> Factor:
    """Anchor a full state block, used to pin the measured current state."""
    ref = np.asarray(theta_ref, dtype=float)

    def residual(values: Values) -> np.ndarray:
        return values[key] - ref

    def jacobians(values: Values) -> list[np.ndarray]:
        return [_EYE6]

    return Factor((key,), residual, jacobians, sigma, label)


def reference_factor(key: VariableKey, mu_i, sigma_ref: float,
                     label: str = "ref") -> Factor:
    """Centerline-following prior; same shape as the position prior, looser."""
    return prior_position_factor(key, mu_i, sigma_ref, label)


def velocity_factor(key: VariableKey, v_des, sigma_vel: float,
                    label: str = "vel") -> Factor:
    vd = np.asarray(v_des, dtype=float)

    def residual(values: Values) -> np.ndarray:
        th = values[key]
        return np.array([th[2] - vd[0], th[3] - vd[1]])

    def jacobians(values: Values) -> list[np.ndarray]:
        return [_VEL_SEL]

    return Factor((key,), residual, jacobians, sigma_vel, label)


def limit_factor(key: VariableKey, lower, upper, sigma: float,
                 block: tuple[int, int] | None = None,
                 label: str = "limit") -> Factor:
    """Componentwise hinge on a box: zero inside, linear outside.

    `block` selects the component range inside the variable; defaults to the
    whole block (controls) — states pass (4, 6) for the rotation components.
    """
    lo = tuple(float(v) for v in lower)
    hi = tuple(float(v) for v in upper)
    start, stop = block if block is not None else (0, key.dim)
    width = stop - start
    if width != len(lo) or width != len(hi):
        raise ValueError("bounds length must match the selected block width")
    smooth = tuple(max(LIMIT_SMOOTHING_FRACTION * (hi[c] - lo[c]), 1e-9)
                   for c in range(width))

    def residual(values: Values) -> np.ndarray:
        z = values[key]
        out = np.zeros(width)
        for c in range(width):
            zc = z[start + c]
            high, _ = _soft_hinge(zc - hi[c], smooth[c])
            low, _ = _soft_hinge(lo[c] - zc, smooth[c])
            out[c] = high - low
        return out

    def jacobians(values: Values) -> list[np.ndarray]:
        z = values[key]
        J = np.zeros((width, key.dim))
        for c in range(width):
            zc = z[start + c]
            _, dh = _soft_hinge(zc - hi[c], smooth[c])
            _, dl = _soft_hinge(lo[c] - zc, smooth[c])
            J[c, start + c] = dh + dl
        return [J]

    return Factor((key,), residual, jacobians, sigma, label, hinge=True)


def dynamics_factor(key_prev_state: VariableKey, key_prev_control: VariableKey,
                    key_state: VariableKey, model: AffineDiscreteModel,
                    sigma_sys: float, label: str = "sys") -> Factor:
    """Fixed affine one-step model: residual theta_i - (A theta + B u + c)."""
    a, b, c = model.A, model.B, model.c
    neg_a, neg_b = -a, -b

    def residual(values: Values) -> np.ndarray:
        return values[key_state] - (a @ values[key_prev_state]
                                    + b @ values[key_prev_control] + c)

    def jacobians(values: Values) -> list[np.ndarray]:
        return [neg_a, neg_b, _EYE6]

    return Factor((key_prev_state, key_prev_control, key_state),
                  residual, jacobians, sigma_sys, label)


def discrete_dynamics_factor(key_prev_state: VariableKey,
                             key_prev_control: VariableKey,
                             key_state: VariableKey, params: VehicleParams,
                             ts: float, sigma_sys: float,
                             label: str = "sys") -> Factor:
    """Backward-Euler one-step constraint, relinearized at the current iterate.

    Residual: theta' - theta - Ts * g(theta', u).  The implicit form is the
    only one-step map that stays well behaved here: the yaw/slip coupling is
    stiff and strongly non-normal at low speed, so explicit maps over 20 ms
    either go unstable or need Jacobian chains whose entries overflow; the
    implicit residual keeps every Jacobian entry at the Ts * gain scale.
    """

    def residual(values: Values) -> np.ndarray:
        prev = values[key_prev_state]
        u = values[key_prev_control]
        nxt = values[key_state]
        return nxt - prev - ts * dynamics_raw(nxt, u, params)

    def jacobians(values: Values) -> list[np.ndarray]:
        u = values[key_prev_control]
        nxt = values[key_state]
        a1, b1 = continuous_jacobians(nxt, u, params)
        return [_NEG_EYE6, -ts * b1, _EYE6 - ts * a1]

    return Factor((key_prev_state, key_prev_control, key_state),
                  residual, jacobians, sigma_sys, label)


def obstacle_factor(key: VariableKey, sdf: SdfGrid, epsilon: float,
                    sigma_obs: float, label: str = "obs") -> Factor:
    """Hinge on the signed boundary distance at the state's position.

    The kink at d == epsilon carries the quadratic blend; beyond the blend
    the residual is exactly -d + epsilon inside and zero outside.
    """

    def residual(values: Values) -> np.ndarray:
        th = values[key]
        d, _ = query_sdf(sdf, (th[0], th[1]))
        value, _ = _soft_hinge(epsilon - d, OBSTACLE_SMOOTHING)
        return np.array([value])

    def jacobians(values: Values) -> list[np.ndarray]:
        th = values[key]
        d, grad = query_sdf(sdf, (th[0], th[1]))
        _, slope = _soft_hinge(epsilon - d, OBSTACLE_SMOOTHING)
        J = np.zeros((1, 6))
        J[0, 0] = -slope * grad[0]
        J[0, 1] = -slope * grad[1]
        return [J]

    return Factor((key,), residual, jacobians, sigma_obs, label, hinge=True)


def _curvature_geometry(pi, p1, p2):
    """Residual a and its derivatives wrt the three points, or None if degenerate."""
    ux = pi[0] - p1[0]
    uy = pi[1] - p1[1]
    wx = p2[0] - p1[0]
    wy = p2[1] - p1[1]
    n = math.hypot(wx, wy)
    if n < CURVATURE_DEGENERACY_EPS:
        return None
    tx, ty = wx / n, wy / n
    ut = ux * tx + uy * ty
    ax = ux - ut * tx
    ay = uy - ut * ty

    # d a / d u = I - t t^T
    p_tt = np.array([[1.0 - tx * tx, -tx * ty],
                     [-tx * ty, 1.0 - ty * ty]])
    # d a / d w = -(1/n) t u^T - (ut/n) I + (2 ut/n) t t^T
    k = ut / n
    da_dw = np.array([
        [-(tx * ux) / n - k + 2 * k * tx * tx, -(tx * uy) / n + 2 * k * tx * ty],
        [-(ty * ux) / n + 2 * k * tx * ty, -(ty * uy) / n - k + 2 * k * ty * ty],
    ])
    return np.array([ax, ay]), p_tt, da_dw


def curvature_factor(key_i: VariableKey, key_i1: VariableKey, key_i2: VariableKey,
                     sigma_curv: float, label: str = "curv") -> Factor:
    """Perpendicular offset of p_i from the line through p_{i+1}, p_{i+2}.

    Zero exactly when the three positions are collinear with p_i on the line;
    shrinking it straightens the local path.
    """
    degenerate_seen = False

    def residual(values: Values) -> np.ndarray:
        nonlocal degenerate_seen
        geo = _curvature_geometry(values[key_i], values[key_i1], values[key_i2])
        if geo is None:
            if not degenerate_seen:
                degenerate_seen = True
                logger.debug("%s: coincident support points, factor treated as inert",
                             label)
            return np.zeros(2)
        return geo[0]

    def jacobians(values: Values) -> list[np.ndarray]:
        geo = _curvature_geometry(values[key_i], values[key_i1], values[key_i2])
        if geo is None:
            return [np.zeros((2, 6)), np.zeros((2, 6)), np.zeros((2, 6))]
        _, p_tt, da_dw = geo
        ji = np.zeros((2, 6))
        ji[:, :2] = p_tt
        j1 = np.zeros((2, 6))
        j1[:, :2] = -p_tt - da_dw
        j2 = np.zeros((2, 6))
        j2[:, :2] = da_dw
        return [ji, j1, j2]

    return Factor((key_i, key_i1, key_i2), residual, jacobians, sigma_curv, label)


def assemble_horizon_factors(state_keys: list[VariableKey],
                             control_keys: list[VariableKey],
                             sdf: SdfGrid,
                             weights: FactorWeights,
                             bounds: StateBounds,
                             reference: ReferenceWindow,
                             params: VehicleParams,
                             ts: float,
                             epsilon: float,
                             start_state,
                             goal_mu=None,
                             include_curvature: bool = True,
                             start_sigma: float | None = None) -> list[Factor]:
    """All factors of one receding-horizon window, in a fixed order.

    Layout for horizon n (len(state_keys) == n+1, len(control_keys) == n):
    one start anchor on the first state, then reference / velocity / rotation
    limits per state, control limits per control, a dynamics factor per
    consecutive (state, control, state) triple, a boundary factor per state,
    a curvature factor per consecutive position triple, and optionally a goal
    position prior on the last state.
    """
    n = len(control_keys)
    if len(state_keys) != n + 1:
        raise ValueError(f"got {len(state_keys)} state keys for {n} controls, "
                         f"expected {n + 1}")
    if len(reference) != n + 1:
        raise ValueError(f"reference window has {len(reference)} rows, expected {n + 1}")

    factors: list[Factor] = [
        state_prior_factor(state_keys[0], start_state,
                           weights.sigma_start_goal if start_sigma is None
                           else start_sigma,
                           label="start")
    ]
    for k, key in enumerate(state_keys):
        factors.append(reference_factor(key, reference.positions[k],
                                        weights.sigma_ref, label=f"ref{k}"))
    for k, key in enumerate(state_keys):
        factors.append(velocity_factor(key, reference.v_des[k],
                                       weights.sigma_vel, label=f"vel{k}"))
    for k, key in enumerate(state_keys):
        factors.append(limit_factor(key, bounds.r_min, bounds.r_max,
                                    weights.sigma_rlim, block=(4, 6),
                                    label=f"rlim{k}"))
    for k, key in enumerate(control_keys):
        factors.append(limit_factor(key, bounds.u_min, bounds.u_max,
                                    weights.sigma_ulim, label=f"ulim{k}"))
    for k in range(n):
        factors.append(discrete_dynamics_factor(
            state_keys[k], control_keys[k], state_keys[k + 1], params, ts,
            weights.sigma_sys, label=f"sys{k}"))
    for k, key in enumerate(state_keys):
        tail = max(0, k - (n - TAIL_MARGIN_STEPS))
        eps_k = epsilon + TAIL_MARGIN_TOTAL * tail / TAIL_MARGIN_STEPS
        factors.append(obstacle_factor(key, sdf, eps_k, weights.sigma_obs,
                                       label=f"obs{k}"))
    if include_curvature:
        for k in range(n - 1):
            factors.append(curvature_factor(state_keys[k], state_keys[k + 1],
                                            state_keys[k + 2], weights.sigma_curv,
                                            label=f"curv{k}"))
    if goal_mu is not None:
        factors.append(prior_position_factor(state_keys[-1], goal_mu,
                                             weights.sigma_start_goal, label="goal"))
    return factors
