"""Single-track vehicle models, tire force laws and a fixed-step RK4 integrator.

Sign conventions: body frame x forward, y left, yaw counter-clockwise.
Tire slip angle is the angle of the wheel-center velocity measured from the
wheel heading, so a positive slip angle produces a negative (rightward)
lateral force for both tire laws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Callable

import numpy as np

G = 9.81
V_MIN = 1.0  # m/s; below this slip angles and side-slip are undefined


class LowSpeedError(ValueError):
    """Longitudinal speed dropped below V_MIN where slip angles are undefined."""


class TireModel(str, Enum):
    LINEAR = "linear"
    PACEJKA = "pacejka"


@dataclass(frozen=True)
class PacejkaCoeffs:
    B: float
    C: float
    D: float
    E: float

    def __post_init__(self):
        if not (self.B > 0 and self.C > 1 and self.D > 0):
            raise ValueError(f"invalid Pacejka coefficients {self}")

    @property
    def cornering_stiffness(self) -> float:
        """Small-slip slope B*C*D of the magic formula [N/rad]."""
        return self.B * self.C * self.D


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of the single-track model.

    Mass, axle distances, track width and yaw inertia default to the
    Audi A6 Avant test vehicle. Tire and wheel values are simulator choices.
    When the Pacejka coefficients are left unset, the peak force D of each
    axle is ``mu`` times its static load.
    """

    mass: float = 1578.0
    l_f: float = 1.134
    l_r: float = 1.578
    track: float = 1.513
    inertia_z: float = 2924.0
    cf: float = 80_000.0
    cr: float = 80_000.0
    wheel_radius: float = 0.316
    mu: float = 1.0
    pacejka_front: PacejkaCoeffs | None = field(default=None)
    pacejka_rear: PacejkaCoeffs | None = field(default=None)

    def __post_init__(self):
        for name in ("mass", "l_f", "l_r", "track", "inertia_z", "cf", "cr", "wheel_radius", "mu"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"VehicleParams.{name} must be positive and finite, got {value}")
        if self.pacejka_front is None:
            load = self.mass * G * self.l_r / self.wheelbase
            object.__setattr__(self, "pacejka_front", PacejkaCoeffs(10.0, 1.9, self.mu * load, 0.97))
        if self.pacejka_rear is None:
            load = self.mass * G * self.l_f / self.wheelbase
            object.__setattr__(self, "pacejka_rear", PacejkaCoeffs(10.0, 1.9, self.mu * load, 0.97))

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = vars(value).copy() if isinstance(value, PacejkaCoeffs) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleParams":
        data = dict(data)
        for key in ("pacejka_front", "pacejka_rear"):
            if data.get(key) is not None:
                data[key] = PacejkaCoeffs(**data[key])
        return cls(**data)


@dataclass(frozen=True)
class VehicleState:
    """Planar rigid-body state; velocities are body-frame."""

    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.vx, self.vy, self.yaw_rate])

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(*(float(v) for v in arr))

    @property
    def sideslip(self) -> float:
        if self.vx < V_MIN:
            raise LowSpeedError(f"side-slip undefined at vx={self.vx:.3f} m/s")
        return math.atan2(self.vy, self.vx)


def wrap_angle(angle):
    """Wrap to the half-open interval (-pi, pi]."""
    return math.pi - np.mod(math.pi - angle, 2.0 * math.pi)


def kinematic_sideslip(delta, params: VehicleParams):
    """Side-slip at the CoG of the kinematic bicycle: atan(l_r tan(delta) / (l_f + l_r)).

    Accepts scalars or arrays of road-wheel steering angles [rad].
    """
    d = np.asarray(delta, dtype=float)
    if np.any(~(np.abs(d) < math.pi / 2)):
        raise ValueError("kinematic side-slip requires |delta| < pi/2")
    beta = np.arctan(params.l_r * np.tan(d) / params.wheelbase)
    return float(beta) if beta.ndim == 0 else beta


def linear_tire_lateral_force(alpha, stiffness):
    return -stiffness * alpha


def pacejka_lateral_force(alpha, coeffs: PacejkaCoeffs):
    """Magic formula lateral force, negated so that it opposes the slip angle."""
    B, C, D, E = coeffs.B, coeffs.C, coeffs.D, coeffs.E
    ba = B * alpha
    return -D * np.sin(C * np.arctan(ba - E * (ba - np.arctan(ba))))


def _pacejka_scalar(alpha: float, c: PacejkaCoeffs) -> float:
    ba = c.B * alpha
    return -c.D * math.sin(c.C * math.atan(ba - c.E * (ba - math.atan(ba))))


def axle_lateral_forces(vx: float, vy: float, yaw_rate: float, delta: float,
                        params: VehicleParams, tire: TireModel) -> tuple[float, float]:
    """Front and rear lateral tire forces [N], each in its own wheel frame."""
    if not vx >= V_MIN:
        raise LowSpeedError(f"slip angles undefined at vx={vx:.3f} m/s")
    alpha_f = math.atan((vy + params.l_f * yaw_rate) / vx) - delta
    alpha_r = math.atan((vy - params.l_r * yaw_rate) / vx)
    if tire is TireModel.LINEAR:
        return -params.cf * alpha_f, -params.cr * alpha_r
    return _pacejka_scalar(alpha_f, params.pacejka_front), _pacejka_scalar(alpha_r, params.pacejka_rear)


def velocity_derivative(vx: float, vy: float, yaw_rate: float, delta: float, fx: float,
                        params: VehicleParams, tire: TireModel) -> tuple[float, float, float]:
    """Time derivative of (vx, vy, yaw_rate). The drive force acts at the rear axle."""
    fyf, fyr = axle_lateral_forces(vx, vy, yaw_rate, delta, params, tire)
    sin_d, cos_d = math.sin(delta), math.cos(delta)
    dvx = yaw_rate * vy + (fx - fyf * sin_d) / params.mass
    dvy = -yaw_rate * vx + (fyf * cos_d + fyr) / params.mass
    dr = (params.l_f * fyf * cos_d - params.l_r * fyr) / params.inertia_z
    return dvx, dvy, dr


def body_accelerations(vx: float, vy: float, yaw_rate: float, delta: float, fx: float,
                       params: VehicleParams, tire: TireModel) -> tuple[float, float]:
    """Specific accelerations an IMU at the CoG would read: (dvx - r*vy, dvy + r*vx)."""
    fyf, fyr = axle_lateral_forces(vx, vy, yaw_rate, delta, params, tire)
    ax = (fx - fyf * math.sin(delta)) / params.mass
    ay = (fyf * math.cos(delta) + fyr) / params.mass
    return ax, ay


def dynamic_bicycle_derivative(state: VehicleState, delta: float, fx: float,
                               params: VehicleParams, tire: TireModel = TireModel.PACEJKA) -> VehicleState:
    """Derivative of the full planar state, returned in the VehicleState layout."""
    return VehicleState.from_array(_state_derivative(state.as_array(), delta, fx, params, tire))


def _state_derivative(s: np.ndarray, delta: float, fx: float,
                      params: VehicleParams, tire: TireModel) -> np.ndarray:
    _, _, psi, vx, vy, r = s
    dvx, dvy, dr = velocity_derivative(vx, vy, r, delta, fx, params, tire)
    c, sn = math.cos(psi), math.sin(psi)
    return np.array([vx * c - vy * sn, vx * sn + vy * c, r, dvx, dvy, dr])


def rk4(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step for the autonomous system y' = f(y)."""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(state: VehicleState, delta: float, fx: float, dt: float,
             params: VehicleParams, tire: TireModel = TireModel.PACEJKA) -> VehicleState:
    """Advance the state by dt with (delta, fx) held constant; yaw re-wrapped."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = rk4(lambda s: _state_derivative(s, delta, fx, params, tire), state.as_array(), dt)
    out[2] = wrap_angle(out[2])
    return VehicleState.from_array(out)


def velocity_step(v: np.ndarray, delta: float, fx: float, dt: float,
                  params: VehicleParams, tire: TireModel) -> np.ndarray:
    """RK4 step of the (vx, vy, yaw_rate) subsystem, which does not depend on pose."""

    def f(u):
        return np.array(velocity_derivative(u[0], u[1], u[2], delta, fx, params, tire))

    return rk4(f, np.asarray(v, dtype=float), dt)
