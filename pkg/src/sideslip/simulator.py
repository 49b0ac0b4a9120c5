"""Synthetic driving data: maneuvers, ground-truth trajectories and noisy in-car sensor logs.

Both streams are sampled at 50 Hz. Ground truth comes from the dynamic
single-track model with Pacejka tires; the in-car log adds per-channel bias
and Gaussian noise drawn from the noise seed.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import ClassVar, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .evaluation import Regime, classify_maneuver
from .seeding import substream
from .vehicle import (
    G,
    V_MIN,
    LowSpeedError,
    TireModel,
    VehicleParams,
    VehicleState,
    _state_derivative,
    body_accelerations,
    rk4,
    wrap_angle,
)

SAMPLE_PERIOD = 0.02
STEP_ONSET = 1.0  # s, step-steer onset
SPEED_GAIN = 3.0  # 1/s, proportional speed-tracking gain
MAX_CITY_STEER = 0.45  # rad, road-wheel limit for city steering
FRICTION_CIRCLE_SPAN = 1.1  # histogram extent in g


class ManeuverKind(str, Enum):
    STEP_STEER = "step_steer"
    SLALOM = "slalom"
    CITY_PROFILE = "city_profile"
    RAMP_STEER = "ramp_steer"


@dataclass(frozen=True)
class ManeuverSpec:
    """Steering and speed program for one trajectory.

    ``steer_frequency`` is the sine frequency [Hz] for slalom and city
    driving and the ramp rate [1/s] for a ramp steer (full amplitude is
    reached after ``1/steer_frequency`` seconds). ``speed_profile`` holds
    (t, v) knots interpolated linearly; when empty the speed is held at
    ``target_speed``.

    City steering is a two-tone sine whose amplitude is ``steer_amplitude``
    at ``target_speed`` and scales with (target_speed / v_ref)^2, so the
    lateral acceleration stays roughly constant and slow segments get tight
    turns. It is clipped to MAX_CITY_STEER.
    """

    kind: ManeuverKind
    steer_amplitude: float
    steer_frequency: float
    target_speed: float
    duration: float
    speed_profile: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ManeuverKind(self.kind))
        object.__setattr__(self, "speed_profile", tuple((float(t), float(v)) for t, v in self.speed_profile))
        if not self.duration > 0:
            raise ValueError("maneuver duration must be positive")
        if not self.target_speed >= V_MIN:
            raise ValueError(f"target speed must be at least {V_MIN} m/s")
        if any(v < V_MIN for _, v in self.speed_profile):
            raise ValueError(f"speed profile must stay at or above {V_MIN} m/s")
        if not abs(self.steer_amplitude) < math.pi / 2:
            raise ValueError("steer amplitude must satisfy |delta| < pi/2")
        if self.steer_frequency < 0:
            raise ValueError("steer frequency must be non-negative")
        ts = [t for t, _ in self.speed_profile]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("speed profile knots must have increasing time")

    def steering(self, t: float) -> float:
        a, f = self.steer_amplitude, self.steer_frequency
        if self.kind is ManeuverKind.STEP_STEER:
            return a if t >= STEP_ONSET else 0.0
        if self.kind is ManeuverKind.SLALOM:
            return a * math.sin(2 * math.pi * f * t)
        if self.kind is ManeuverKind.RAMP_STEER:
            return a * min(f * t, 1.0)
        w = 2 * math.pi * f * t
        v_ref, _ = self.speed_reference(t)
        d = a * (self.target_speed / v_ref) ** 2 * (0.6 * math.sin(w) + 0.4 * math.sin(2.3 * w))
        return min(max(d, -MAX_CITY_STEER), MAX_CITY_STEER)

    def speed_reference(self, t: float) -> tuple[float, float]:
        """Reference speed and its slope at time t."""
        if not self.speed_profile:
            return self.target_speed, 0.0
        ts, vs = zip(*self.speed_profile)
        if t <= ts[0]:
            return vs[0], 0.0
        if t >= ts[-1]:
            return vs[-1], 0.0
        i = int(np.searchsorted(ts, t, side="right")) - 1
        slope = (vs[i + 1] - vs[i]) / (ts[i + 1] - ts[i])
        return vs[i] + slope * (t - ts[i]), slope

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["speed_profile"] = [list(k) for k in self.speed_profile]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManeuverSpec":
        return cls(**d)


@dataclass(frozen=True)
class SensorNoiseSpec:
    sigma_ax: float = 0.05
    sigma_ay: float = 0.05
    sigma_yaw_rate: float = 0.002
    sigma_wheel_speed: float = 0.05
    sigma_delta: float = 0.001
    bias_ax: float = 0.0
    bias_ay: float = 0.0
    bias_yaw_rate: float = 0.0
    bias_wheel_speed: float = 0.0
    bias_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("sigma_") and not getattr(self, f.name) >= 0:
                raise ValueError(f"{f.name} must be non-negative")

    @classmethod
    def noise_free(cls, seed: int = 0) -> "SensorNoiseSpec":
        return cls(**{f.name: 0.0 for f in fields(cls) if f.name != "seed"}, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


class SensorFrame(NamedTuple):
    t: float
    ax: float
    ay: float
    yaw_rate: float
    w_fl: float
    w_fr: float
    w_rl: float
    w_rr: float
    delta: float


class ReferenceFrame(NamedTuple):
    t: float
    x: float
    y: float
    vx: float
    vy: float
    psi: float
    theta: float
    phi: float
    psi_rate: float
    theta_rate: float
    phi_rate: float
    beta: float


class _ColumnLog:
    """Columnar storage of a frame sequence; indexing yields frame tuples."""

    frame_type: ClassVar[type]

    def __post_init__(self):
        n = None
        for f in fields(self):
            col = np.ascontiguousarray(getattr(self, f.name), dtype=float)
            if col.ndim != 1:
                raise ValueError(f"column {f.name} must be one-dimensional")
            if n is not None and len(col) != n:
                raise ValueError(f"column {f.name} has length {len(col)}, expected {n}")
            n = len(col)
            setattr(self, f.name, col)

    @classmethod
    def columns(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, slice) or isinstance(i, np.ndarray):
            return type(self)(**{c: getattr(self, c)[i] for c in self.columns()})
        return self.frame_type(*(float(getattr(self, c)[i]) for c in self.columns()))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        return type(other) is type(self) and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in self.columns()
        )

    @classmethod
    def from_frames(cls, frames: Sequence[tuple]):
        frames = list(frames)
        if not frames:
            return cls(**{c: np.empty(0) for c in cls.columns()})
        data = np.array(frames, dtype=float)
        return cls(**{c: data[:, j] for j, c in enumerate(cls.columns())})

    @classmethod
    def concat(cls, logs: Sequence["_ColumnLog"]):
        if not logs:
            return cls.from_frames([])
        return cls(**{c: np.concatenate([getattr(log, c) for log in logs]) for c in cls.columns()})


@dataclass(eq=False)
class SensorLog(_ColumnLog):
    t: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    yaw_rate: np.ndarray
    w_fl: np.ndarray
    w_fr: np.ndarray
    w_rl: np.ndarray
    w_rr: np.ndarray
    delta: np.ndarray
    frame_type: ClassVar[type] = SensorFrame


@dataclass(eq=False)
class ReferenceLog(_ColumnLog):
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    psi_rate: np.ndarray
    theta_rate: np.ndarray
    phi_rate: np.ndarray
    beta: np.ndarray
    frame_type: ClassVar[type] = ReferenceFrame


@dataclass(eq=False)
class Trajectory:
    name: str
    sensor: SensorLog
    reference: ReferenceLog
    maneuver: ManeuverSpec | None = None
    noise: SensorNoiseSpec | None = None
    params: VehicleParams | None = None
    label: Regime | None = None
    max_ay_g: float | None = field(default=None)

    def __post_init__(self):
        if len(self.sensor) != len(self.reference):
            raise ValueError("sensor and reference logs differ in length")
        if self.label is None and len(self.reference):
            self.label, self.max_ay_g = classify_maneuver(self.reference)

    def __len__(self) -> int:
        return len(self.sensor)


def wheel_speeds(vx, vy, yaw_rate, delta, params: VehicleParams):
    """Wheel angular speeds (fl, fr, rl, rr) [rad/s] assuming zero longitudinal slip.

    Works elementwise on scalars or equally shaped arrays.
    """
    vx, vy, yaw_rate, delta = (np.asarray(a, dtype=float) for a in (vx, vy, yaw_rate, delta))
    if np.any(~(vx >= V_MIN)):
        raise LowSpeedError("wheel speeds undefined below V_MIN")
    half = 0.5 * params.track
    vy_front = vy + params.l_f * yaw_rate
    cos_d, sin_d = np.cos(delta), np.sin(delta)
    rw = params.wheel_radius
    w_fl = ((vx - yaw_rate * half) * cos_d + vy_front * sin_d) / rw
    w_fr = ((vx + yaw_rate * half) * cos_d + vy_front * sin_d) / rw
    w_rl = (vx - yaw_rate * half) / rw
    w_rr = (vx + yaw_rate * half) / rw
    return w_fl, w_fr, w_rl, w_rr


def wheel_speeds_from_state(state: VehicleState, delta: float, params: VehicleParams):
    return tuple(float(w) for w in wheel_speeds(state.vx, state.vy, state.yaw_rate, delta, params))


def _integrate(maneuver: ManeuverSpec, params: VehicleParams, tire: TireModel, substeps: int,
               duration: float | None = None):
    """Noise-free run; returns true channels as a dict of arrays."""
    duration = maneuver.duration if duration is None else duration
    n = int(round(duration / SAMPLE_PERIOD)) + 1
    h = SAMPLE_PERIOD / substeps
    out = {k: np.empty(n) for k in ("t", "x", "y", "psi", "vx", "vy", "r", "delta", "ax", "ay")}
    v0, _ = maneuver.speed_reference(0.0)
    s = np.array([0.0, 0.0, 0.0, v0, 0.0, 0.0])
    for k in range(n):
        t = k * SAMPLE_PERIOD
        delta = maneuver.steering(t)
        v_ref, slope = maneuver.speed_reference(t)
        fx = params.mass * (slope + SPEED_GAIN * (v_ref - s[3]))
        ax, ay = body_accelerations(s[3], s[4], s[5], delta, fx, params, tire)
        out["t"][k] = t
        out["x"][k], out["y"][k], out["psi"][k], out["vx"][k], out["vy"][k], out["r"][k] = s
        out["delta"][k], out["ax"][k], out["ay"][k] = delta, ax, ay
        if k < n - 1:
            def f(u):
                return _state_derivative(u, delta, fx, params, tire)
            for _ in range(substeps):
                s = rk4(f, s, h)
            s[2] = wrap_angle(s[2])
    return out


def simulate(maneuver: ManeuverSpec, params: VehicleParams, noise: SensorNoiseSpec,
             tire: TireModel = TireModel.PACEJKA, substeps: int = 4) -> tuple[SensorLog, ReferenceLog]:
    """Simulate one maneuver and return the in-car log and the ground-truth log.

    Inputs are held constant between 50 Hz samples; the model is integrated
    with ``substeps`` RK4 steps per sample. Raises LowSpeedError if the
    vehicle drops below V_MIN.
    """
    tr = _integrate(maneuver, params, tire, substeps)
    n = len(tr["t"])
    zeros = np.zeros(n)
    reference = ReferenceLog(
        t=tr["t"], x=tr["x"], y=tr["y"], vx=tr["vx"], vy=tr["vy"], psi=tr["psi"],
        theta=zeros, phi=zeros, psi_rate=tr["r"], theta_rate=zeros, phi_rate=zeros,
        beta=np.arctan2(tr["vy"], tr["vx"]),
    )
    wheels = wheel_speeds(tr["vx"], tr["vy"], tr["r"], tr["delta"], params)

    rng = np.random.default_rng(noise.seed)
    channels = [
        (tr["ax"], noise.bias_ax, noise.sigma_ax),
        (tr["ay"], noise.bias_ay, noise.sigma_ay),
        (tr["r"], noise.bias_yaw_rate, noise.sigma_yaw_rate),
        *((w, noise.bias_wheel_speed, noise.sigma_wheel_speed) for w in wheels),
        (tr["delta"], noise.bias_delta, noise.sigma_delta),
    ]
    measured = [true + bias + sigma * rng.standard_normal(n) for true, bias, sigma in channels]
    sensor = SensorLog(tr["t"].copy(), *measured)
    return sensor, reference


def max_lateral_acceleration(maneuver: ManeuverSpec, params: VehicleParams,
                             duration: float | None = None, tire: TireModel = TireModel.PACEJKA) -> float:
    """Peak |a_y| in g of the noise-free run; inf if the vehicle spins down below V_MIN."""
    try:
        tr = _integrate(maneuver, params, tire, 4, duration)
    except LowSpeedError:
        return math.inf
    return float(np.max(np.abs(tr["ay"]))) / G


def tune_steer_amplitude(maneuver: ManeuverSpec, target_g: float, params: VehicleParams,
                         horizon: float | None = None) -> ManeuverSpec:
    """Scale the steering amplitude so the peak |a_y| over ``horizon`` equals target_g."""
    sign = 1.0 if maneuver.steer_amplitude >= 0 else -1.0
    horizon = min(maneuver.duration, horizon or maneuver.duration)

    def excess(amplitude):
        spec = replace(maneuver, steer_amplitude=sign * amplitude)
        return max_lateral_acceleration(spec, params, horizon) - target_g

    hi = max(abs(maneuver.steer_amplitude), 1e-3)
    while excess(hi) < 0:
        hi *= 1.6
        if hi >= 0.6:
            raise ValueError(f"cannot reach {target_g:.2f} g with this maneuver")
    amplitude = brentq(excess, 0.0, hi, xtol=1e-6)
    return replace(maneuver, steer_amplitude=sign * amplitude)


# Suites -----------------------------------------------------------------

def normal_maneuvers(seed: int, count: int, duration: float, params: VehicleParams) -> list[ManeuverSpec]:
    """City-style driving: varying speed, smooth steering, peak a_y below ~0.4 g."""
    rng = np.random.default_rng(substream(seed, "suite", "normal"))
    specs = []
    for _ in range(count):
        knots = np.arange(0.0, duration + 1e-9, 10.0)
        speeds = rng.uniform(4.0, 16.0, size=len(knots))
        target_g = rng.uniform(0.08, 0.38)
        amplitude = target_g * G * params.wheelbase / speeds[0] ** 2
        specs.append(ManeuverSpec(
            kind=ManeuverKind.CITY_PROFILE,
            steer_amplitude=float(amplitude * rng.choice([-1.0, 1.0])),
            steer_frequency=float(rng.uniform(0.03, 0.15)),
            target_speed=float(speeds[0]),
            duration=duration,
            speed_profile=tuple(zip(knots.tolist(), speeds.tolist())),
        ))
    return specs


_HARSH_KINDS = (ManeuverKind.SLALOM, ManeuverKind.STEP_STEER, ManeuverKind.SLALOM, ManeuverKind.RAMP_STEER)


def _harsh_template(rng: np.random.Generator, i: int, duration: float,
                    params: VehicleParams) -> tuple[ManeuverSpec, float, float]:
    kind = _HARSH_KINDS[i % len(_HARSH_KINDS)]
    speed = float(rng.uniform(14.0, 22.0))
    target_g = float(rng.uniform(0.6, 0.88))
    if i == 0:
        # Anchor one maneuver well past 0.8 g so every harsh suite contains one.
        target_g = 0.85
    sign = float(rng.choice([-1.0, 1.0]))
    if kind is ManeuverKind.SLALOM:
        freq = float(rng.uniform(0.3, 0.6))
        horizon = 3.0 / freq + 1.0
    elif kind is ManeuverKind.RAMP_STEER:
        freq = float(rng.uniform(0.1, 0.25))
        horizon = 1.0 / freq + 4.0
    else:
        freq = 0.0
        horizon = STEP_ONSET + 5.0
    guess = 0.5 * target_g * G * params.wheelbase / speed ** 2
    spec = ManeuverSpec(kind, sign * guess, freq, speed, duration)
    return spec, target_g, horizon


def _tune_job(job):
    spec, target_g, horizon, params = job
    return tune_steer_amplitude(spec, target_g, params, horizon)


def harsh_maneuvers(seed: int, count: int, duration: float, params: VehicleParams,
                    jobs: int = 1) -> list[ManeuverSpec]:
    """Test-track maneuvers tuned to peak lateral accelerations of 0.6-0.88 g."""
    rng = np.random.default_rng(substream(seed, "suite", "harsh"))
    work = [(*_harsh_template(rng, i, duration, params), params) for i in range(count)]
    return _map(_tune_job, work, jobs)


def build_suite(name: str, seed: int, params: VehicleParams, count: int | None = None,
                duration: float = 60.0, dynamic_fraction: float = 0.2, jobs: int = 1) -> list[ManeuverSpec]:
    """Maneuver list for a named suite: ``benchmark``, ``normal`` or ``harsh``.

    The benchmark mixes city driving and harsh maneuvers roughly 4:1.
    """
    if name == "normal":
        return normal_maneuvers(seed, count or 48, duration, params)
    if name == "harsh":
        return harsh_maneuvers(seed, count or 12, duration, params, jobs)
    if name == "benchmark":
        count = count or 60
        n_dynamic = int(round(dynamic_fraction * count))
        return (normal_maneuvers(seed, count - n_dynamic, duration, params)
                + harsh_maneuvers(seed, n_dynamic, duration, params, jobs))
    raise ValueError(f"unknown suite {name!r}")


def _simulate_job(job):
    name, spec, params, noise = job
    sensor, reference = simulate(spec, params, noise)
    return Trajectory(name, sensor, reference, spec, noise, params)


def simulate_suite(specs: Sequence[ManeuverSpec], params: VehicleParams, seed: int,
                   noise: SensorNoiseSpec | None = None, jobs: int = 1) -> list[Trajectory]:
    """Simulate every maneuver; trajectory i draws its sensor noise from substream (seed, noise, i)."""
    noise = noise or SensorNoiseSpec()
    work = [
        (f"traj_{i:03d}", spec, params, replace(noise, seed=substream(seed, "noise", i)))
        for i, spec in enumerate(specs)
    ]
    return _map(_simulate_job, work, jobs)


def _map(fn, work, jobs):
    if jobs <= 1 or len(work) <= 1:
        return [fn(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, work))


# Dataset views and split ------------------------------------------------

def friction_circle_histogram(frames: SensorLog, bins: int):
    """2-D sample counts over (a_x/g, a_y/g) on [-1.1, 1.1]^2.

    Samples outside the grid are counted in the border cells so the total
    always equals the number of frames. Returns (counts, edges); counts is
    indexed [a_x bin, a_y bin].
    """
    if bins < 1:
        raise ValueError("bins must be at least 1")
    span = FRICTION_CIRCLE_SPAN
    edges = np.linspace(-span, span, bins + 1)
    if len(frames) == 0:
        return np.zeros((bins, bins), dtype=np.int64), edges
    gx = np.clip(np.asarray(frames.ax) / G, -span, span)
    gy = np.clip(np.asarray(frames.ay) / G, -span, span)
    counts, _, _ = np.histogram2d(gx, gy, bins=[edges, edges])
    return counts.astype(np.int64), edges


def sideslip_histogram(frames: ReferenceLog, bin_width: float):
    """Counts of beta in bins of ``bin_width`` aligned to multiples of the width."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    beta = np.asarray(frames.beta)
    if len(beta) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(1)
    idx = np.floor(beta / bin_width).astype(np.int64)
    lo = int(idx.min())
    counts = np.bincount(idx - lo)
    edges = (lo + np.arange(len(counts) + 1)) * bin_width
    return counts, edges


class StratificationError(ValueError):
    pass


def split_dataset(trajectories: Sequence[Trajectory], ratio: float = 0.8,
                  seed: int = 0) -> tuple[list[Trajectory], list[Trajectory]]:
    """Stratified train/test split at trajectory granularity.

    Within each regime label, round(ratio * count) randomly chosen
    trajectories go to train and the rest to test. Input order is kept.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    by_label: dict[str, list[int]] = {}
    for i, traj in enumerate(trajectories):
        by_label.setdefault(Regime(traj.label).value, []).append(i)
    rng = np.random.default_rng(substream(seed, "split"))
    train_idx: set[int] = set()
    for label in sorted(by_label):
        members = by_label[label]
        if len(members) < 2:
            raise StratificationError(f"label {label!r} has {len(members)} trajectory; need at least 2")
        n_train = int(math.floor(ratio * len(members) + 0.5))
        picked = rng.permutation(len(members))[:n_train]
        train_idx.update(members[j] for j in picked)
    train = [t for i, t in enumerate(trajectories) if i in train_idx]
    test = [t for i, t in enumerate(trajectories) if i not in train_idx]
    return train, test
