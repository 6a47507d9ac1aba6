"""Dynamic bicycle model of a 1:43 racecar with simplified Pacejka tires.

State is [x, y, vx, vy, phi, omega]: planar position, body-frame velocity,
heading, yaw rate.  Control is [delta, d]: steering angle and motor duty
cycle.  Rear longitudinal force comes from a DC-motor model, lateral forces
from the magic-formula curve D*sin(C*arctan(B*alpha)) in the slip angle.

Everything here is written with scalar math on purpose: these functions sit
inside the planner's inner loop and per-call numpy overhead dominates at this
size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "VehicleState",
    "ControlInput",
    "VehicleParams",
    "AffineDiscreteModel",
    "SLIP_VX_FLOOR",
    "tire_forces",
    "dynamics",
    "dynamics_raw",
    "continuous_jacobians",
    "integrate",
    "stable_substeps",
    "euler_step",
    "implicit_step",
    "linearize_discretize",
    "discrete_jacobians",
]

# Slip angles divide by vx; below this speed the division uses the floor
# instead (the velocity limit range reaches below zero, so raw division is
# unsafe at launch).
SLIP_VX_FLOOR = 0.1


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    phi: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.phi, self.omega])

    @staticmethod
    def from_array(arr) -> "VehicleState":
        x, y, vx, vy, phi, omega = (float(v) for v in arr)
        return VehicleState(x, y, vx, vy, phi, omega)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class ControlInput:
    delta: float = 0.0
    d: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.d])

    @staticmethod
    def from_array(arr) -> "ControlInput":
        delta, d = (float(v) for v in arr)
        return ControlInput(delta, d)


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants; defaults are the identified 1:43 racecar values."""

    m: float = 0.041
    Iz: float = 27.8e-6
    lf: float = 0.029
    lb: float = 0.033
    L: float = 0.12
    W: float = 0.06
    Cr0: float = 0.0518
    Cm1: float = 0.287
    Cm2: float = 0.0545
    Cd: float = 0.00035
    Bf: float = 2.579
    Cf: float = 1.2
    Df: float = 0.192
    Bb: float = 3.3852
    Cb_tire: float = 1.2691
    Db: float = 1.737

    def __post_init__(self):
        for name in ("m", "Iz", "lf", "lb", "L", "W"):
            if getattr(self, name) <= 0:
                raise ValueError(f"vehicle parameter {name} must be positive")
        if self.Df <= 0 or self.Db <= 0:
            raise ValueError("Pacejka peak forces Df, Db must be positive")


@dataclass(frozen=True)
class AffineDiscreteModel:
    """One-step prediction theta' = A theta + B u + c at sample time Ts."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    Ts: float

    def predict(self, theta, u) -> np.ndarray:
        return self.A @ theta + self.B @ u + self.c


def _slip_angles(vx: float, vy: float, omega: float, delta: float,
                 p: VehicleParams) -> tuple[float, float]:
    # Rear slip carries no leading minus: the rear lateral force must oppose
    # the slide (negative feedback), as in the standard identified model.
    vxs = vx if vx > SLIP_VX_FLOOR else SLIP_VX_FLOOR
    alpha_f = -math.atan((omega * p.lf + vy) / vxs) + delta
    alpha_b = math.atan((omega * p.lb - vy) / vxs)
    return alpha_f, alpha_b


def tire_forces(state: VehicleState, control: ControlInput,
                params: VehicleParams) -> tuple[float, float, float]:
    """(front lateral, rear lateral, rear longitudinal) tire forces in newtons."""
    alpha_f, alpha_b = _slip_angles(state.vx, state.vy, state.omega,
                                    control.delta, params)
    ffy = params.Df * math.sin(params.Cf * math.atan(params.Bf * alpha_f))
    fby = params.Db * math.sin(params.Cb_tire * math.atan(params.Bb * alpha_b))
    fbx = (params.Cm1 - params.Cm2 * state.vx) * control.d \
        - params.Cr0 - params.Cd * state.vx * state.vx
    return ffy, fby, fbx


def _deriv(x: float, y: float, vx: float, vy: float, phi: float, omega: float,
           delta: float, d: float, p: VehicleParams) -> tuple[float, ...]:
    """Continuous dynamics as a 6-tuple of floats."""
    vxs = vx if vx > SLIP_VX_FLOOR else SLIP_VX_FLOOR
    alpha_f = -math.atan((omega * p.lf + vy) / vxs) + delta
    alpha_b = math.atan((omega * p.lb - vy) / vxs)
    ffy = p.Df * math.sin(p.Cf * math.atan(p.Bf * alpha_f))
    fby = p.Db * math.sin(p.Cb_tire * math.atan(p.Bb * alpha_b))
    fbx = (p.Cm1 - p.Cm2 * vx) * d - p.Cr0 - p.Cd * vx * vx
    sphi, cphi = math.sin(phi), math.cos(phi)
    sdel, cdel = math.sin(delta), math.cos(delta)
    return (
        vx * cphi - vy * sphi,
        vx * sphi + vy * cphi,
        (fbx - ffy * sdel) / p.m + vy * omega,
        (fby + ffy * cdel) / p.m - vx * omega,
        omega,
        (ffy * p.lf * cdel - fby * p.lb) / p.Iz,
    )


def dynamics(state: VehicleState, control: ControlInput,
             params: VehicleParams) -> np.ndarray:
    """Time derivative of the state under the given control."""
    return np.array(_deriv(state.x, state.y, state.vx, state.vy, state.phi,
                           state.omega, control.delta, control.d, params))


def dynamics_raw(theta: np.ndarray, u: np.ndarray,
                 params: VehicleParams) -> np.ndarray:
    """`dynamics` on raw arrays, for factor evaluation."""
    return np.array(_deriv(theta[0], theta[1], theta[2], theta[3], theta[4],
                           theta[5], u[0], u[1], params))


def continuous_jacobians(theta: np.ndarray, u: np.ndarray,
                         params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """(dg/dtheta, dg/du) on raw arrays, for factor evaluation."""
    return _continuous_jacobians(theta[2], theta[3], theta[4], theta[5],
                                 u[0], u[1], params)


def _rk4(th: tuple[float, ...], delta: float, d: float, p: VehicleParams,
         ts: float) -> tuple[float, ...]:
    k1 = _deriv(*th, delta, d, p)
    s2 = tuple(th[i] + 0.5 * ts * k1[i] for i in range(6))
    k2 = _deriv(*s2, delta, d, p)
    s3 = tuple(th[i] + 0.5 * ts * k2[i] for i in range(6))
    k3 = _deriv(*s3, delta, d, p)
    s4 = tuple(th[i] + ts * k3[i] for i in range(6))
    k4 = _deriv(*s4, delta, d, p)
    return tuple(th[i] + ts / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
                 for i in range(6))


def integrate(state: VehicleState, control: ControlInput, params: VehicleParams,
              ts: float, steps: int = 1) -> VehicleState:
    """Zero-order-hold RK4 over ts; heading stays continuous (never wrapped).

    `steps` splits ts into RK4 substeps: the lateral dynamics of this light
    car are stiff at low speed (fastest eigenvalue scales like 1/vx), so a
    20 ms step needs substepping to integrate stably near launch.
    """
    if ts <= 0:
        raise ValueError("sample time must be positive")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    th = (state.x, state.y, state.vx, state.vy, state.phi, state.omega)
    h = ts / steps
    for _ in range(steps):
        th = _rk4(th, control.delta, control.d, params, h)
    return VehicleState(*th)


def stable_substeps(vx: float, ts: float) -> int:
    """RK4 substep count for integrating this model accurately over ts.

    The yaw row couples to lateral slip with gains up to ~1e5 per second at
    crawl speeds (the inertia is tiny), and that non-normal coupling, not the
    eigenvalues, sets the usable explicit step: substep until h * ||Ac|| is
    order one.  The gain scales like 1/vx.
    """
    norm = 9600.0 / max(abs(vx), SLIP_VX_FLOOR)
    return max(1, min(4096, int(math.ceil(ts * norm / 2.0))))




def euler_step(theta: np.ndarray, u: np.ndarray, params: VehicleParams,
               ts: float) -> np.ndarray:
    """Explicit discrete prediction theta + Ts * g(theta, u)."""
    f = _deriv(theta[0], theta[1], theta[2], theta[3], theta[4], theta[5],
               u[0], u[1], params)
    return np.array([theta[i] + ts * f[i] for i in range(6)])


def implicit_step(theta: np.ndarray, u: np.ndarray, params: VehicleParams,
                  ts: float) -> np.ndarray:
    """Backward-Euler step: solve theta' = theta + Ts * g(theta', u) by Newton.

    This is the one-step map the planner's dynamics factors constrain, so the
    closed-loop simulator advances with exactly the same map; any mismatch
    between simulated plant and prediction model reappears at the next warm
    start scaled by the dynamics weight and stalls the solver.  The implicit
    map is also the only stable single-step choice for this stiff model at
    racing sample times.
    """
    nxt = euler_step(theta, u, params, ts)
    res = nxt - theta - ts * dynamics_raw(nxt, u, params)
    norm = float(np.max(np.abs(res)))
    for _ in range(50):
        if norm < 1e-12:
            break
        ac, _ = continuous_jacobians(nxt, u, params)
        step = np.linalg.solve(np.eye(6) - ts * ac, res)
        scale = 1.0
        while scale > 1e-6:
            cand = nxt - scale * step
            cres = cand - theta - ts * dynamics_raw(cand, u, params)
            cnorm = float(np.max(np.abs(cres)))
            if cnorm < norm:
                nxt, res, norm = cand, cres, cnorm
                break
            scale *= 0.5
        else:
            break
    return nxt


def _continuous_jacobians(vx: float, vy: float, phi: float, omega: float,
                          delta: float, d: float,
                          p: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Ac = dg/dtheta (6x6) and Bc = dg/du (6x2)."""
    clamped = vx <= SLIP_VX_FLOOR
    vxs = SLIP_VX_FLOOR if clamped else vx
    dvxs = 0.0 if clamped else 1.0

    qf = (omega * p.lf + vy) / vxs
    qb = (omega * p.lb - vy) / vxs
    alpha_f = -math.atan(qf) + delta
    alpha_b = math.atan(qb)

    # d(alpha)/d(vx, vy, omega, delta)
    inv_f = 1.0 / (1.0 + qf * qf)
    inv_b = 1.0 / (1.0 + qb * qb)
    daf_dvx = inv_f * qf / vxs * dvxs
    daf_dvy = -inv_f / vxs
    daf_dom = -inv_f * p.lf / vxs
    dab_dvx = -inv_b * qb / vxs * dvxs
    dab_dvy = -inv_b / vxs
    dab_dom = inv_b * p.lb / vxs

    # force curves and their slopes in the slip angle
    tf = math.atan(p.Bf * alpha_f)
    tb = math.atan(p.Bb * alpha_b)
    ffy = p.Df * math.sin(p.Cf * tf)
    fby = p.Db * math.sin(p.Cb_tire * tb)
    dffy = p.Df * math.cos(p.Cf * tf) * p.Cf * p.Bf / (1.0 + (p.Bf * alpha_f) ** 2)
    dfby = p.Db * math.cos(p.Cb_tire * tb) * p.Cb_tire * p.Bb / (1.0 + (p.Bb * alpha_b) ** 2)

    dfbx_dvx = -p.Cm2 * d - 2.0 * p.Cd * vx
    dfbx_dd = p.Cm1 - p.Cm2 * vx

    sphi, cphi = math.sin(phi), math.cos(phi)
    sdel, cdel = math.sin(delta), math.cos(delta)
    m, iz = p.m, p.Iz

    ac = np.zeros((6, 6))
    ac[0, 2] = cphi
    ac[0, 3] = -sphi
    ac[0, 4] = -vx * sphi - vy * cphi
    ac[1, 2] = sphi
    ac[1, 3] = cphi
    ac[1, 4] = vx * cphi - vy * sphi
    ac[2, 2] = (dfbx_dvx - sdel * dffy * daf_dvx) / m
    ac[2, 3] = (-sdel * dffy * daf_dvy) / m + omega
    ac[2, 5] = (-sdel * dffy * daf_dom) / m + vy
    ac[3, 2] = (dfby * dab_dvx + cdel * dffy * daf_dvx) / m - omega
    ac[3, 3] = (dfby * dab_dvy + cdel * dffy * daf_dvy) / m
    ac[3, 5] = (dfby * dab_dom + cdel * dffy * daf_dom) / m - vx
    ac[4, 5] = 1.0
    ac[5, 2] = (p.lf * cdel * dffy * daf_dvx - p.lb * dfby * dab_dvx) / iz
    ac[5, 3] = (p.lf * cdel * dffy * daf_dvy - p.lb * dfby * dab_dvy) / iz
    ac[5, 5] = (p.lf * cdel * dffy * daf_dom - p.lb * dfby * dab_dom) / iz

    bc = np.zeros((6, 2))
    bc[2, 0] = (-ffy * cdel - sdel * dffy) / m
    bc[2, 1] = dfbx_dd / m
    bc[3, 0] = (cdel * dffy - ffy * sdel) / m
    bc[5, 0] = p.lf * (cdel * dffy - ffy * sdel) / iz
    return ac, bc


def linearize_discretize(state: VehicleState, control: ControlInput,
                         params: VehicleParams, ts: float) -> AffineDiscreteModel:
    """Affine one-step model A = I + Ts*Ac, B = Ts*Bc, exact at the expansion point."""
    if ts <= 0:
        raise ValueError("sample time must be positive")
    theta = state.as_array()
    u = control.as_array()
    ac, bc = _continuous_jacobians(state.vx, state.vy, state.phi, state.omega,
                                   control.delta, control.d, params)
    g = dynamics(state, control, params)
    a = np.eye(6) + ts * ac
    b = ts * bc
    c = ts * (g - ac @ theta - bc @ u)
    return AffineDiscreteModel(A=a, B=b, c=c, Ts=ts)


def discrete_jacobians(theta: np.ndarray, u: np.ndarray, params: VehicleParams,
                       ts: float) -> tuple[np.ndarray, np.ndarray]:
    """(I + Ts*Ac, Ts*Bc) at a raw state/control pair, for factor evaluation."""
    ac, bc = _continuous_jacobians(theta[2], theta[3], theta[4], theta[5],
                                   u[0], u[1], params)
    a = ts * ac
    a[0, 0] += 1.0
    a[1, 1] += 1.0
    a[2, 2] += 1.0
    a[3, 3] += 1.0
    a[4, 4] += 1.0
    a[5, 5] += 1.0
    return a, ts * bc
