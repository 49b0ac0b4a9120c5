"""Hybrid side-slip observer: measurements plus kinematic side-slip through the two-stage MLP."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mlp import MlpTopology, MlpWeights, TrainConfig, predict, train
from .vehicle import VehicleParams, kinematic_sideslip

CHANNELS = ("ax", "ay", "yaw_rate", "w_fl", "w_fr", "w_rl", "w_rr", "delta")


class StandardizerError(ValueError):
    pass


@dataclass(frozen=True)
class Standardizer:
    channels: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))
        if self.mean.shape != (len(self.channels),) or self.std.shape != self.mean.shape:
            raise StandardizerError("mean/std length does not match the channel list")
        if np.any(~(self.std > 0)):
            bad = [c for c, s in zip(self.channels, self.std) if not s > 0]
            raise StandardizerError(f"non-positive std for channel(s) {bad}")

    def transform(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.std


def feature_matrix(log) -> np.ndarray:
    """(n, 8) raw in-car measurements in CHANNELS order."""
    return np.column_stack([np.asarray(getattr(log, c), dtype=float) for c in CHANNELS])


def fit_standardizer(train_logs) -> Standardizer:
    """Per-channel mean and population std over the given training logs only."""
    logs = [train_logs] if hasattr(train_logs, "t") else list(train_logs)
    raw = np.vstack([feature_matrix(log) for log in logs]) if logs else np.empty((0, len(CHANNELS)))
    if raw.shape[0] < 2:
        raise StandardizerError("need at least two frames to fit a standardizer")
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    # a constant channel can still get a tiny std from rounding in the mean
    constant = np.all(raw == raw[0], axis=0)
    degenerate = [c for c, s, k in zip(CHANNELS, std, constant) if k or not s > 0]
    if degenerate:
        raise StandardizerError(f"zero variance in channel(s) {degenerate}")
    return Standardizer(CHANNELS, mean, std)


@dataclass(eq=False)
class HybridModel:
    weights: MlpWeights
    standardizer: Standardizer

    @property
    def topology(self) -> MlpTopology:
        return self.weights.topology


def _inputs(log, model: HybridModel, params: VehicleParams):
    if model.standardizer.channels != CHANNELS:
        raise StandardizerError(f"model channel order {model.standardizer.channels} != {CHANNELS}")
    x = model.standardizer.transform(feature_matrix(log))
    kin = kinematic_sideslip(np.asarray(log.delta, dtype=float), params)
    return x, np.atleast_1d(kin)


def run_hybrid(log, model: HybridModel, params: VehicleParams) -> np.ndarray:
    """Per-frame beta estimates; frames are processed independently."""
    x, kin = _inputs(log, model, params)
    return predict(model.weights, x, kin)


def estimate(model: HybridModel, frame, params: VehicleParams) -> float:
    """Beta estimate for a single SensorFrame (or anything with the channel attributes)."""
    x = model.standardizer.transform(np.array([[float(getattr(frame, c)) for c in CHANNELS]]))
    kin = np.atleast_1d(kinematic_sideslip(float(frame.delta), params))
    return float(predict(model.weights, x, kin)[0])


def training_arrays(trajectories: Sequence, standardizer: Standardizer, params: VehicleParams):
    """Stack standardized features, kinematic beta and reference beta over trajectories."""
    x = standardizer.transform(np.vstack([feature_matrix(t.sensor) for t in trajectories]))
    delta = np.concatenate([np.asarray(t.sensor.delta) for t in trajectories])
    beta = np.concatenate([np.asarray(t.reference.beta) for t in trajectories])
    return x, np.atleast_1d(kinematic_sideslip(delta, params)), beta


def train_hybrid(trajectories: Sequence, params: VehicleParams, config: TrainConfig | None = None,
                 topology: MlpTopology | None = None) -> tuple[HybridModel, list[float]]:
    """Fit the standardizer on the training trajectories, then train the network."""
    config = config or TrainConfig()
    topology = topology or MlpTopology()
    standardizer = fit_standardizer([t.sensor for t in trajectories])
    x, kin, beta = training_arrays(trajectories, standardizer, params)
    weights, history = train(x, kin, beta, config, topology)
    return HybridModel(weights, standardizer), history
