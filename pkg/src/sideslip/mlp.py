"""Two-stage feedforward network with a mid-network side input, trained with Adam.

Stage 1 maps the measurement vector through tanh layers; the kinematic
side-slip is then appended and stage 2 maps the result to a single linear
output. The ablation variant appends the kinematic side-slip to the
network input instead.

All parameters live in one flat float64 buffer; per-layer weight matrices
(out x in) and bias vectors are views into it, so optimizer updates and
serialization operate on a single array.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .seeding import substream


class ConcatPoint(str, Enum):
    STAGE2 = "stage2"
    STAGE1_INPUT = "stage1_input"


class ShapeError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class MlpTopology:
    n_features: int = 8
    stage1: tuple[int, ...] = (16, 32, 64, 128)
    stage2: tuple[int, ...] = (32, 16, 1)
    concat_point: ConcatPoint = ConcatPoint.STAGE2

    def __post_init__(self):
        object.__setattr__(self, "stage1", tuple(int(w) for w in self.stage1))
        object.__setattr__(self, "stage2", tuple(int(w) for w in self.stage2))
        object.__setattr__(self, "concat_point", ConcatPoint(self.concat_point))
        if not self.stage1 or not self.stage2 or self.stage2[-1] != 1:
            raise ShapeError("need at least one layer per stage and a scalar output")
        if self.n_features < 1 or min(self.stage1 + self.stage2) < 1:
            raise ShapeError("layer widths must be positive")

    @property
    def input_dim(self) -> int:
        return self.n_features + (self.concat_point is ConcatPoint.STAGE1_INPUT)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) for every layer in order."""
        widths1 = (self.input_dim,) + self.stage1
        stage2_in = self.stage1[-1] + (self.concat_point is ConcatPoint.STAGE2)
        widths2 = (stage2_in,) + self.stage2
        shapes = [(o, i) for i, o in zip(widths1, widths1[1:])]
        shapes += [(o, i) for i, o in zip(widths2, widths2[1:])]
        return shapes

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage1"], d["stage2"] = list(self.stage1), list(self.stage2)
        d["concat_point"] = self.concat_point.value
        return d


@dataclass(eq=False)
class MlpWeights:
    topology: MlpTopology
    flat: np.ndarray
    W: list[np.ndarray] = field(init=False, repr=False)
    b: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.flat = np.ascontiguousarray(self.flat, dtype=float)
        if self.flat.shape != (self.topology.n_params,):
            raise ShapeError(f"parameter vector has shape {self.flat.shape}, "
                             f"topology needs ({self.topology.n_params},)")
        self.W, self.b = [], []
        pos = 0
        for fan_out, fan_in in self.topology.layer_shapes:
            self.W.append(self.flat[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in))
            pos += fan_out * fan_in
            self.b.append(self.flat[pos:pos + fan_out])
            pos += fan_out

    @classmethod
    def zeros(cls, topology: MlpTopology) -> "MlpWeights":
        return cls(topology, np.zeros(topology.n_params))

    @classmethod
    def from_layers(cls, topology: MlpTopology, weights, biases) -> "MlpWeights":
        shapes = topology.layer_shapes
        if len(weights) != len(shapes) or len(biases) != len(shapes):
            raise ShapeError(f"expected {len(shapes)} layers, got {len(weights)} weights / {len(biases)} biases")
        parts = []
        for i, ((fan_out, fan_in), w, b) in enumerate(zip(shapes, weights, biases)):
            w, b = np.asarray(w, dtype=float), np.asarray(b, dtype=float)
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}, "
                                 f"expected ({fan_out}, {fan_in}) / ({fan_out},)")
            parts += [w.ravel(), b]
        return cls(topology, np.concatenate(parts))

    def copy(self) -> "MlpWeights":
        return MlpWeights(self.topology, self.flat.copy())

    @property
    def weight_mask(self) -> np.ndarray:
        """True at entries of weight matrices, False at biases."""
        mask = np.zeros(self.flat.shape, dtype=bool)
        pos = 0
        for fan_out, fan_in in self.topology.layer_shapes:
            mask[pos:pos + fan_out * fan_in] = True
            pos += fan_out * fan_in + fan_out
        return mask


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_rate: float = 1e-5
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.adam_eps > 0 and self.l2_rate >= 0):
            raise ValueError("learning rate and epsilon must be positive, l2 rate non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def xavier_init(topology: MlpTopology, seed: int) -> MlpWeights:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    weights = MlpWeights.zeros(topology)
    for w in weights.W:
        fan_out, fan_in = w.shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return weights


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    outputs: list[np.ndarray]  # activation of each layer
    batch_size: int


def _assemble(features, kinematic_beta, topology: MlpTopology) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(features, dtype=float))
    kin = np.asarray(kinematic_beta, dtype=float).reshape(-1)
    if x.shape[1] != topology.n_features:
        raise ShapeError(f"expected {topology.n_features} features, got {x.shape[1]}")
    if kin.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} feature rows but {kin.shape[0]} kinematic values")
    return x, kin[:, None]


def forward(weights: MlpWeights, features, kinematic_beta) -> tuple[np.ndarray, ForwardCache]:
    """Batch forward pass; returns beta_hat of shape (n,) and the backprop cache."""
    topo = weights.topology
    x, kin = _assemble(features, kinematic_beta, topo)
    a = np.hstack([x, kin]) if topo.concat_point is ConcatPoint.STAGE1_INPUT else x
    n_stage1 = len(topo.stage1)
    last = len(weights.W) - 1
    inputs, outputs = [], []
    for i, (W, b) in enumerate(zip(weights.W, weights.b)):
        if i == n_stage1 and topo.concat_point is ConcatPoint.STAGE2:
            a = np.hstack([a, kin])
        inputs.append(a)
        z = a @ W.T + b
        a = z if i == last else np.tanh(z)
        outputs.append(a)
    return a[:, 0], ForwardCache(inputs, outputs, x.shape[0])


def predict(weights: MlpWeights, features, kinematic_beta) -> np.ndarray:
    """Inference whose value for a row does not depend on the other rows in the batch.

    Each row goes through its own vector-matrix product, so evaluating a log
    at once gives bit-identical results to evaluating frames one by one.
    """
    topo = weights.topology
    x, kin = _assemble(features, kinematic_beta, topo)
    a = (np.hstack([x, kin]) if topo.concat_point is ConcatPoint.STAGE1_INPUT else x)[:, None, :]
    kin = kin[:, None, :]
    n_stage1 = len(topo.stage1)
    last = len(weights.W) - 1
    for i, (W, b) in enumerate(zip(weights.W, weights.b)):
        if i == n_stage1 and topo.concat_point is ConcatPoint.STAGE2:
            a = np.concatenate([a, kin], axis=2)
        z = np.matmul(a, W.T) + b
        a = z if i == last else np.tanh(z)
    return a[:, 0, 0]


def loss(beta_hat, beta_ref, weights: MlpWeights | None, l2_rate: float) -> float:
    """Mean squared error plus l2_rate times the sum of squared weight-matrix entries."""
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    beta_ref = np.asarray(beta_ref, dtype=float).reshape(-1)
    if beta_hat.shape != beta_ref.shape:
        raise ShapeError("prediction and reference batches differ in length")
    if beta_hat.size == 0:
        raise ValueError("empty batch")
    value = float(np.mean((beta_hat - beta_ref) ** 2))
    if weights is not None and l2_rate:
        value += l2_rate * sum(float(np.sum(w * w)) for w in weights.W)
    return value


def backward(weights: MlpWeights, cache: ForwardCache, beta_ref, l2_rate: float) -> MlpWeights:
    """Exact gradient of ``loss`` with respect to every weight and bias."""
    topo = weights.topology
    y = np.asarray(beta_ref, dtype=float).reshape(-1)
    n = cache.batch_size
    if y.shape[0] != n or len(cache.inputs) != len(weights.W):
        raise ShapeError("cache does not match this batch or network")
    grads = MlpWeights.zeros(topo)
    n_stage1 = len(topo.stage1)
    delta = (2.0 / n) * (cache.outputs[-1][:, 0] - y)[:, None]
    for i in range(len(weights.W) - 1, -1, -1):
        a_in = cache.inputs[i]
        grads.W[i][...] = delta.T @ a_in + (2.0 * l2_rate) * weights.W[i]
        grads.b[i][...] = delta.sum(axis=0)
        if i == 0:
            break
        back = delta @ weights.W[i]
        if i == n_stage1 and topo.concat_point is ConcatPoint.STAGE2:
            back = back[:, :-1]
        delta = back * (1.0 - cache.outputs[i - 1] ** 2)
    return grads


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              config: TrainConfig) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError("parameter, gradient and moment shapes differ")
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return new, AdamState(m, v, t)


def train(features, kinematic_beta, beta_ref, config: TrainConfig,
          topology: MlpTopology) -> tuple[MlpWeights, list[float]]:
    """Minibatch Adam training; returns final weights and per-epoch mean loss.

    Initialization and shuffling draw from independent substreams of
    ``config.seed``. The last partial batch of each epoch is used.
    """
    x, kin = _assemble(features, kinematic_beta, topology)
    y = np.asarray(beta_ref, dtype=float).reshape(-1)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if y.shape[0] != n:
        raise ShapeError("feature rows and targets differ in length")
    weights = xavier_init(topology, substream(config.seed, "init"))
    shuffle_rng = np.random.default_rng(substream(config.seed, "shuffle"))
    state = AdamState.zeros(topology.n_params)
    history = []
    order = np.arange(n)
    for epoch in range(config.epochs):
        if config.shuffle_each_epoch:
            order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            beta_hat, cache = forward(weights, x[idx], kin[idx])
            batch_loss = loss(beta_hat, y[idx], weights, config.l2_rate)
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"non-finite loss in epoch {epoch}")
            total += batch_loss * len(idx)
            grads = backward(weights, cache, y[idx], config.l2_rate)
            flat, state = adam_step(weights.flat, grads.flat, state, config)
            weights = MlpWeights(topology, flat)
        history.append(total / n)
    if not np.all(np.isfinite(weights.flat)):
        raise DivergenceError("non-finite weights after training")
    return weights, history
