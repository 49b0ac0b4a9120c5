"""Error metrics, maneuver regime classification and the comparison report."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

G = 9.81
DYNAMIC_THRESHOLD_G = 0.5


class Regime(str, Enum):
    NORMAL = "normal"
    DYNAMIC = "dynamic"


def _pair(estimates, references) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(references, dtype=float)
    if est.shape != ref.shape or est.ndim != 1:
        raise ValueError(f"length mismatch: {est.shape} estimates vs {ref.shape} references")
    return est, ref


def error_series(estimates, references) -> np.ndarray:
    """Per-frame absolute error |beta_hat_k - beta_ref_k| in rad (NaN where the estimate is invalid)."""
    est, ref = _pair(estimates, references)
    return np.abs(est - ref)


def mae(estimates, references) -> float:
    """Mean absolute error in mrad; frames with a non-finite estimate are skipped."""
    est, ref = _pair(estimates, references)
    if est.size == 0:
        raise ValueError("mae of an empty series")
    valid = np.isfinite(est)
    if not valid.any():
        raise ValueError("no valid estimates")
    return 1000.0 * float(np.mean(np.abs(est[valid] - ref[valid])))


def lateral_acceleration(reference) -> np.ndarray:
    """Ground-truth lateral acceleration dVy/dt + yaw_rate * Vx from a reference log."""
    vx = np.asarray(reference.vx, dtype=float)
    vy = np.asarray(reference.vy, dtype=float)
    ay = np.asarray(reference.psi_rate, dtype=float) * vx
    if len(vy) > 1:
        ay = ay + np.gradient(vy, np.asarray(reference.t, dtype=float))
    return ay


def classify_maneuver(reference, sensor=None) -> tuple[Regime, float]:
    """Regime of a trajectory from its ground-truth peak |a_y| (Dynamic iff >= 0.5 g).

    ``sensor`` is accepted for interface symmetry and only checked for
    length; measured accelerations never influence the label.
    """
    if len(reference.t) == 0:
        raise ValueError("cannot classify an empty trajectory")
    if sensor is not None and len(sensor.t) != len(reference.t):
        raise ValueError("sensor and reference logs differ in length")
    peak = float(np.max(np.abs(lateral_acceleration(reference)))) / G
    return (Regime.DYNAMIC if peak >= DYNAMIC_THRESHOLD_G else Regime.NORMAL), peak


@dataclass(frozen=True)
class Score:
    mae_mrad: float
    max_error_mrad: float
    n_samples: int


def _score(errors: np.ndarray) -> Score:
    return Score(1000.0 * float(np.mean(errors)), 1000.0 * float(np.max(errors)), int(errors.size))


@dataclass
class TrajectoryResult:
    name: str
    label: Regime
    max_ay_g: float
    t: np.ndarray
    ay_abs: np.ndarray
    beta_ref: np.ndarray
    estimates: dict[str, np.ndarray]
    errors: dict[str, np.ndarray]
    valid: np.ndarray
    scores: dict[str, Score]


@dataclass
class EvalReport:
    observers: list[str]
    whole: dict[str, Score]
    by_regime: dict[Regime, dict[str, Score]]
    trajectories: list[TrajectoryResult] = field(default_factory=list)

    def table(self, regime: Regime | None = None) -> dict[str, Score]:
        return self.whole if regime is None else self.by_regime[regime]


def build_report(test_set: Sequence, estimates: Mapping[str, Sequence[np.ndarray]],
                 out_dir: str | Path | None = None) -> EvalReport:
    """Score every observer over identical frames and optionally write the report files.

    ``estimates[name][i]`` is the beta series of observer ``name`` on
    trajectory ``test_set[i]``. A frame where any observer is invalid
    (non-finite) is dropped for all observers.
    """
    observers = list(estimates)
    if not observers:
        raise ValueError("no observers to report")
    if not test_set:
        raise ValueError("empty test set")
    results = []
    for i, traj in enumerate(test_set):
        ref = traj.reference
        beta_ref = np.asarray(ref.beta, dtype=float)
        per_obs = {}
        for name in observers:
            series = np.asarray(estimates[name][i], dtype=float)
            if series.shape != beta_ref.shape:
                raise ValueError(f"observer {name!r} produced {series.shape} estimates "
                                 f"for {traj.name} with {beta_ref.shape} frames")
            per_obs[name] = series
        valid = np.logical_and.reduce([np.isfinite(s) for s in per_obs.values()])
        errors = {name: error_series(s, beta_ref) for name, s in per_obs.items()}
        label, peak = classify_maneuver(ref)
        scores = {name: _score(e[valid]) for name, e in errors.items()} if valid.any() else {}
        results.append(TrajectoryResult(
            name=traj.name, label=label, max_ay_g=peak, t=np.asarray(ref.t, dtype=float),
            ay_abs=np.abs(lateral_acceleration(ref)), beta_ref=beta_ref, estimates=per_obs,
            errors=errors, valid=valid, scores=scores,
        ))

    def pooled(subset):
        return {name: _score(np.concatenate([r.errors[name][r.valid] for r in subset])) for name in observers}

    whole = pooled(results)
    by_regime = {}
    for regime in Regime:
        subset = [r for r in results if r.label is regime and r.valid.any()]
        if subset:
            by_regime[regime] = pooled(subset)
    report = EvalReport(observers, whole, by_regime, results)
    if out_dir is not None:
        from .dataio import write_report

        write_report(report, out_dir)
    return report


def render_tables(report: EvalReport) -> str:
    """Plain-text MAE tables: whole test set, then one per regime present."""
    blocks = [("Whole test set", report.whole)]
    for regime in Regime:
        if regime in report.by_regime:
            blocks.append((f"{regime.value.capitalize()} maneuvers", report.by_regime[regime]))
    width = max(len(n) for n in report.observers)
    lines = []
    for title, table in blocks:
        lines.append(title)
        lines.append(f"  {'observer':<{width}}  {'MAE [mrad]':>11}  {'max [mrad]':>11}  {'samples':>8}")
        for name in report.observers:
            s = table[name]
            lines.append(f"  {name:<{width}}  {s.mae_mrad:>11.3f}  {s.max_error_mrad:>11.3f}  {s.n_samples:>8d}")
        lines.append("")
    return "\n".join(lines)
