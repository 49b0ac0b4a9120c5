"""File formats: trajectory CSV logs with a JSON sidecar, the model file and report CSVs.

Floats are written with ``repr`` (shortest round-trip decimal), so every
finite float64 reads back bit-identical. Readers reject any deviation from
the schema instead of coercing.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import EvalReport, Regime, render_tables
from .hybrid import HybridModel, Standardizer
from .mlp import MlpTopology, MlpWeights, ShapeError, TrainConfig
from .simulator import (
    SAMPLE_PERIOD,
    ManeuverSpec,
    ReferenceLog,
    SensorLog,
    SensorNoiseSpec,
    Trajectory,
)
from .vehicle import VehicleParams

SCHEMA_VERSION = 1
MODEL_FORMAT_VERSION = 1

TRAJECTORY_COLUMNS = (
    "t", "ax", "ay", "yaw_rate", "w_fl", "w_fr", "w_rl", "w_rr", "delta",
    "beta_ref", "vx_ref", "vy_ref", "psi_ref", "x_ref", "y_ref", "theta_ref", "phi_ref",
    "psi_rate_ref", "theta_rate_ref", "phi_rate_ref",
)
_SENSOR_MAP = {c: c for c in SensorLog.columns()}
_REFERENCE_MAP = {
    "beta_ref": "beta", "vx_ref": "vx", "vy_ref": "vy", "psi_ref": "psi", "x_ref": "x", "y_ref": "y",
    "theta_ref": "theta", "phi_ref": "phi", "psi_rate_ref": "psi_rate",
    "theta_rate_ref": "theta_rate", "phi_rate_ref": "phi_rate",
}


class DataFormatError(ValueError):
    """Base class for schema violations in artifact files."""


class HeaderError(DataFormatError):
    pass


class RowArityError(DataFormatError):
    pass


class TimeOrderError(DataFormatError):
    pass


class VersionError(DataFormatError):
    pass


class ModelShapeError(DataFormatError, ShapeError):
    pass


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


# Trajectories -----------------------------------------------------------

def write_trajectory(path: str | Path, traj: Trajectory) -> None:
    """Write the CSV log and its metadata sidecar ``<stem>.meta.json``."""
    path = Path(path)
    cols = []
    for name in TRAJECTORY_COLUMNS:
        if name in _SENSOR_MAP:
            cols.append(getattr(traj.sensor, _SENSOR_MAP[name]))
        else:
            cols.append(getattr(traj.reference, _REFERENCE_MAP[name]))
    lines = [",".join(TRAJECTORY_COLUMNS)]
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "schema_version": SCHEMA_VERSION,
        "name": traj.name,
        "label": None if traj.label is None else Regime(traj.label).value,
        "max_ay_g": traj.max_ay_g,
        "maneuver": None if traj.maneuver is None else traj.maneuver.to_dict(),
        "noise": None if traj.noise is None else traj.noise.to_dict(),
        "params": None if traj.params is None else traj.params.to_dict(),
    }
    _write_json(sidecar_path(path), meta)


def read_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise VersionError(f"{side}: unsupported schema version {meta.get('schema_version')!r}")
    lines = path.read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != TRAJECTORY_COLUMNS:
        raise HeaderError(f"{path}: header does not match the trajectory schema")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(TRAJECTORY_COLUMNS):
            raise RowArityError(f"{path}:{lineno}: {len(fields)} fields, expected {len(TRAJECTORY_COLUMNS)}")
        try:
            rows.append([float(v) for v in fields])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(len(rows), len(TRAJECTORY_COLUMNS))
    t = data[:, 0]
    if len(t) > 1:
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise TimeOrderError(f"{path}: time column is not strictly increasing")
        if np.any(np.abs(dt - SAMPLE_PERIOD) > 1e-9):
            raise TimeOrderError(f"{path}: samples are not spaced {SAMPLE_PERIOD} s apart")
    col = {name: data[:, j] for j, name in enumerate(TRAJECTORY_COLUMNS)}
    sensor = SensorLog(**{field: col[name] for name, field in _SENSOR_MAP.items()})
    reference = ReferenceLog(t=col["t"].copy(), **{field: col[name] for name, field in _REFERENCE_MAP.items()})
    label = Regime(meta["label"]) if meta.get("label") else None
    return Trajectory(
        name=meta.get("name", path.stem),
        sensor=sensor,
        reference=reference,
        maneuver=ManeuverSpec.from_dict(meta["maneuver"]) if meta.get("maneuver") else None,
        noise=SensorNoiseSpec(**meta["noise"]) if meta.get("noise") else None,
        params=VehicleParams.from_dict(meta["params"]) if meta.get("params") else None,
        label=label,
        max_ay_g=meta.get("max_ay_g") if label is not None else None,
    )


# Model file -------------------------------------------------------------

def training_fingerprint(*arrays: np.ndarray) -> str:
    """SHA-256 over the raw float64 bytes of the training arrays."""
    digest = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


def write_model(path: str | Path, model: HybridModel, config: TrainConfig | None = None,
                fingerprint: str | None = None) -> None:
    w = model.weights
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "topology": w.topology.to_dict(),
        "layers": [
            {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in zip(w.W, w.b)
        ],
        "standardizer": {
            "channels": list(model.standardizer.channels),
            "mean": model.standardizer.mean.tolist(),
            "std": model.standardizer.std.tolist(),
        },
        "train_config": None if config is None else config.to_dict(),
        "training_fingerprint": fingerprint,
    }
    _write_json(Path(path), doc)


def read_model(path: str | Path) -> tuple[HybridModel, dict]:
    """Load a model file; returns the model and the document's metadata fields."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not a model document ({exc})") from None
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported model format version {doc.get('format_version')!r}")
    try:
        topology = MlpTopology(**doc["topology"])
        layers = doc["layers"]
        std_doc = doc["standardizer"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed model document ({exc})") from None
    expected = topology.layer_shapes
    if len(layers) != len(expected):
        raise ModelShapeError(f"{path}: {len(layers)} layers stored, topology has {len(expected)}")
    weights, biases = [], []
    for i, (layer, (fan_out, fan_in)) in enumerate(zip(layers, expected)):
        W = np.array(layer["weight"], dtype=float)
        b = np.array(layer["bias"], dtype=float)
        if list(layer["shape"]) != [fan_out, fan_in] or W.size != fan_out * fan_in or b.shape != (fan_out,):
            raise ModelShapeError(f"{path}: layer {i} has shape {layer['shape']} "
                                  f"({W.size} weights, {b.size} biases), expected [{fan_out}, {fan_in}]")
        weights.append(W.reshape(fan_out, fan_in))
        biases.append(b)
    if not all(np.all(np.isfinite(a)) for a in weights + biases):
        raise DataFormatError(f"{path}: non-finite parameters")
    standardizer = Standardizer(std_doc["channels"], std_doc["mean"], std_doc["std"])
    model = HybridModel(MlpWeights.from_layers(topology, weights, biases), standardizer)
    meta = {k: doc.get(k) for k in ("train_config", "training_fingerprint")}
    return model, meta


# Reports ----------------------------------------------------------------

def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, int) else _fmt(v))
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def _table_rows(table, observers):
    return [(name, table[name].mae_mrad, table[name].max_error_mrad, table[name].n_samples) for name in observers]


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    """Emit MAE tables, per-trajectory scores, error and overlay series under out_dir."""
    out = Path(out_dir)
    (out / "errors").mkdir(parents=True, exist_ok=True)
    (out / "overlay").mkdir(parents=True, exist_ok=True)
    header = ("observer", "mae_mrad", "max_error_mrad", "n_samples")
    _write_csv(out / "mae_whole.csv", header, _table_rows(report.whole, report.observers))
    for regime, table in report.by_regime.items():
        _write_csv(out / f"mae_{regime.value}.csv", header, _table_rows(table, report.observers))
    per_traj = []
    for r in report.trajectories:
        for name in report.observers:
            if name in r.scores:
                s = r.scores[name]
                per_traj.append((r.name, r.label.value, r.max_ay_g, name, s.mae_mrad, s.max_error_mrad, s.n_samples))
    _write_csv(out / "mae_per_trajectory.csv",
               ("trajectory", "label", "max_ay_g", "observer", "mae_mrad", "max_error_mrad", "n_samples"), per_traj)
    for r in report.trajectories:
        obs = report.observers
        _write_csv(out / "errors" / f"{r.name}.csv",
                   ("t", "ay_abs", "valid", *(f"err_{o}" for o in obs)),
                   ((t, a, int(v), *(r.errors[o][k] for o in obs))
                    for k, (t, a, v) in enumerate(zip(r.t, r.ay_abs, r.valid))))
        _write_csv(out / "overlay" / f"{r.name}.csv",
                   ("t", "beta_ref", *(f"beta_{o}" for o in obs)),
                   ((t, b, *(r.estimates[o][k] for o in obs)) for k, (t, b) in enumerate(zip(r.t, r.beta_ref))))
    (out / "tables.txt").write_text(render_tables(report))


def write_beta_series(path: str | Path, t, beta_hat) -> None:
    _write_csv(Path(path), ("t", "beta_hat"), zip(np.asarray(t), np.asarray(beta_hat)))


def read_beta_series(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "t,beta_hat":
        raise HeaderError(f"{path}: expected header 't,beta_hat'")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]], dtype=float).reshape(-1, 2)
    return data[:, 0], data[:, 1]

