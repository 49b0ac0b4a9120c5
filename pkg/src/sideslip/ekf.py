"""Extended Kalman filter over the dynamic single-track model (baseline observer).

State: (vx, vy, yaw_rate). Measurements: body-frame specific accelerations
(a_x, a_y), yaw rate and the rear-axle wheel-speed velocity. Jacobians are
central finite differences of the discrete step map and of the measurement
function, so any tire law can be plugged in.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .vehicle import (
    V_MIN,
    LowSpeedError,
    TireModel,
    VehicleParams,
    axle_lateral_forces,
    body_accelerations,
    velocity_step,
)


class EkfNumericalError(ArithmeticError):
    """Innovation covariance could not be inverted."""


def _diag(*values):
    return field(default_factory=lambda: np.diag(values))


@dataclass(frozen=True)
class EkfConfig:
    q: np.ndarray = _diag(0.05, 0.05, 0.01)
    r: np.ndarray = _diag(0.0025, 0.0025, 4e-6, 0.01)
    p0: np.ndarray = _diag(0.25, 0.25, 0.01)
    tire: TireModel = TireModel.LINEAR
    fd_step: float = 1e-6

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("q", "r", "p0"):
            d[key] = np.asarray(d[key]).tolist()
        d["tire"] = TireModel(self.tire).value
        return d


@dataclass(frozen=True)
class EkfState:
    """Filter mean and covariance plus the inputs used by the measurement model."""

    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    delta: float = 0.0
    fx: float = 0.0
    innovation: np.ndarray | None = None

    def __post_init__(self):
        for name, shape in (("x", (3,)), ("P", (3, 3)), ("Q", (3, 3)), ("R", (4, 4))):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"EkfState.{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)


def _jacobian(f, x: np.ndarray, step: float) -> np.ndarray:
    fx0 = f(x)
    J = np.empty((len(fx0), len(x)))
    for j in range(len(x)):
        h = step * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (f(x + e) - f(x - e)) / (2.0 * h)
    return J


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _clamp_speed(x: np.ndarray) -> np.ndarray:
    if x[0] < V_MIN:
        x = x.copy()
        x[0] = V_MIN
    return x


def step_jacobian(x, delta: float, fx: float, dt: float, params: VehicleParams,
                  tire: TireModel, fd_step: float = 1e-6) -> np.ndarray:
    """Finite-difference Jacobian of the one-step RK4 map of (vx, vy, yaw_rate)."""
    return _jacobian(lambda u: velocity_step(u, delta, fx, dt, params, tire),
                     np.asarray(x, dtype=float), fd_step)


def ekf_predict(state: EkfState, delta: float, fx: float, dt: float, params: VehicleParams,
                tire: TireModel = TireModel.LINEAR, fd_step: float = 1e-6) -> EkfState:
    """Propagate the mean by one RK4 step and the covariance by F P F^T + Q dt."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not state.x[0] >= V_MIN:
        raise LowSpeedError(f"EKF prediction undefined at vx={state.x[0]:.3f} m/s")
    x = velocity_step(state.x, delta, fx, dt, params, tire)
    F = step_jacobian(state.x, delta, fx, dt, params, tire, fd_step)
    P = _symmetrize(F @ state.P @ F.T + state.Q * dt)
    return replace(state, x=_clamp_speed(x), P=P, delta=delta, fx=fx, innovation=None)


def measurement_model(x, delta: float, fx: float, params: VehicleParams, tire: TireModel) -> np.ndarray:
    """Predicted (a_x, a_y, yaw_rate, vx) for state x and inputs (delta, fx)."""
    ax, ay = body_accelerations(x[0], x[1], x[2], delta, fx, params, tire)
    return np.array([ax, ay, x[2], x[0]])


def ekf_update(state: EkfState, z, params: VehicleParams, tire: TireModel = TireModel.LINEAR,
               fd_step: float = 1e-6) -> EkfState:
    """Kalman correction with z = (a_x, a_y, yaw_rate, vx_wheel).

    Uses the Joseph form and re-symmetrizes P. The inputs stored on the
    state are the ones the measurement model is evaluated with.
    """
    z = np.asarray(z, dtype=float)

    def h(u):
        return measurement_model(u, state.delta, state.fx, params, tire)

    y = z - h(state.x)
    H = _jacobian(h, state.x, fd_step)
    S = H @ state.P @ H.T + state.R
    S = _symmetrize(S)
    try:
        if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e15:
            raise np.linalg.LinAlgError("ill-conditioned innovation covariance")
        K = np.linalg.solve(S, H @ state.P).T
    except np.linalg.LinAlgError as exc:
        raise EkfNumericalError(str(exc)) from exc
    x = state.x + K @ y
    I_KH = np.eye(3) - K @ H
    P = _symmetrize(I_KH @ state.P @ I_KH.T + K @ state.R @ K.T)
    return replace(state, x=_clamp_speed(x), P=P, innovation=y)


def ekf_sideslip(state: EkfState) -> float:
    vx, vy = state.x[0], state.x[1]
    if not vx >= V_MIN:
        raise LowSpeedError(f"side-slip undefined at vx={vx:.3f} m/s")
    return math.atan2(vy, vx)


def longitudinal_force(ax: float, x, delta: float, params: VehicleParams, tire: TireModel) -> float:
    """Drive force that reproduces the measured a_x at state x.

    The measured specific force already contains the longitudinal
    projection of the front lateral force, which the model adds back.
    """
    fyf, _ = axle_lateral_forces(x[0], x[1], x[2], delta, params, tire)
    return params.mass * ax + fyf * math.sin(delta)


def run_ekf(log, params: VehicleParams, config: EkfConfig | None = None) -> np.ndarray:
    """Filter a sensor log; returns one beta estimate per frame, NaN where undefined.

    Frames whose wheel-speed velocity is below V_MIN, or where the estimate
    itself reaches the low-speed limit, are gaps; the filter re-initializes
    on the first valid frame after a gap.
    """
    config = config or EkfConfig()
    tire = TireModel(config.tire)
    n = len(log.t)
    if n == 0:
        raise ValueError("empty sensor log")
    out = np.full(n, np.nan)
    vx_wheel = 0.5 * (np.asarray(log.w_rl) + np.asarray(log.w_rr)) * params.wheel_radius
    state = None
    for k in range(n):
        delta = float(log.delta[k])
        z = np.array([log.ax[k], log.ay[k], log.yaw_rate[k], vx_wheel[k]])
        if not vx_wheel[k] >= V_MIN:
            state = None
            continue
        try:
            if state is None:
                state = EkfState(np.array([vx_wheel[k], 0.0, z[2]]), config.p0, config.q, config.r)
            else:
                dt = float(log.t[k] - log.t[k - 1])
                state = ekf_predict(state, state.delta, state.fx, dt, params, tire, config.fd_step)
            fx = longitudinal_force(z[0], state.x, delta, params, tire)
            state = ekf_update(replace(state, delta=delta, fx=fx), z, params, tire, config.fd_step)
            out[k] = ekf_sideslip(state)
        except LowSpeedError:
            # the estimate itself drifted to standstill: mark a gap and restart
            state = None
    return out
