"""Stacked recurrent sequence autoencoder with activation and batch-norm
interlayers.

Layer stack for hidden widths (32, 16, 8, 16, 32) and frame dimension F:

    R(32) A BN  R(16) A BN  R(8) A BN  R(16) A BN  R(32) A BN  R(F)

Every recurrent layer consumes and emits full sequences; the final layer has
no activation/batch-norm pair and its width equals the flattened frame so the
reconstruction matches the input cuboid shape. Cuboids are (batch, T, F)
arrays; internally everything runs time-major (T, batch, features).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cells
from .cells import CellState, CellVariant
from .errors import ConfigError, InvalidInputError, ShapeError
from .numerics import Rng


@dataclass(frozen=True)
class AutoencoderConfig:
    frame_dim: int
    seq_len: int = 4
    hidden_dims: tuple = (32, 16, 8, 16, 32)
    variant: CellVariant = field(default_factory=cells.bi_gated)
    activation: str = "relu"
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.frame_dim < 1 or self.seq_len < 1:
            raise ConfigError("frame_dim and seq_len must be >= 1")
        if len(self.hidden_dims) == 0 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be nonempty positive widths")
        if self.hidden_dims != self.hidden_dims[::-1]:
            raise ConfigError(f"hidden_dims {self.hidden_dims} are not symmetric around the bottleneck")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown interlayer activation {self.activation!r}")

    @property
    def output_dim(self) -> int:
        return self.frame_dim


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for inference."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9
    mode: str = "train"

    @classmethod
    def fresh(cls, dim: int, epsilon: float, momentum: float) -> "BatchNormState":
        return cls(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim), epsilon, momentum)


def _bn_forward(x: np.ndarray, state: BatchNormState):
    if x.shape[-1] != state.gamma.shape[0]:
        raise ShapeError(f"batchnorm: feature dim {x.shape[-1]} != {state.gamma.shape[0]}")
    flat = x.reshape(-1, x.shape[-1])
    if state.mode == "train":
        if flat.shape[0] < 2:
            raise InvalidInputError("train-mode batch norm needs at least 2 samples")
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mean
        state.running_var = m * state.running_var + (1.0 - m) * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (flat - mean) * inv_std
    y = state.gamma * xhat + state.beta
    return y.reshape(x.shape), (xhat, inv_std)


def batchnorm_apply(x: np.ndarray, state: BatchNormState) -> np.ndarray:
    """Normalize x (..., features) per state.mode; train mode updates running stats."""
    y, _ = _bn_forward(np.asarray(x, dtype=np.float64), state)
    return y


class RecurrentLayer:
    def __init__(self, variant: CellVariant, input_dim: int, hidden_dim: int, rng: Rng):
        self.variant = variant
        self.weights = cells.init_cell_weights(variant, input_dim, hidden_dim, rng)
        self._cache = None
        self.grads = {}

    @property
    def hidden_dim(self) -> int:
        return self.weights.hidden_dim

    def forward(self, seq: np.ndarray, train: bool) -> np.ndarray:
        init = CellState.zeros(self.hidden_dim, seq.shape[1:-1])
        hs, _, cache = cells.sequence_forward(self.variant, self.weights, init, seq)
        self._cache = cache
        return hs

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        g = cells.sequence_backward(self.variant, self.weights, self._cache, d_out)
        self.grads = {f"W_{k}": g.dW[k] for k in g.dW} | {f"b_{k}": g.db[k] for k in g.db}
        return g.d_xs

    def params(self) -> dict:
        w = self.weights
        return {f"W_{k}": w.W[k] for k in w.W} | {f"b_{k}": w.b[k] for k in w.b}

    def set_params(self, values: dict) -> None:
        for k in self.weights.W:
            self.weights.W[k] = values[f"W_{k}"]
        for k in self.weights.b:
            self.weights.b[k] = values[f"b_{k}"]


class ActivationLayer:
    def __init__(self, kind: str):
        self.kind = kind
        self._cache = None
        self.grads = {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        y = np.maximum(x, 0.0) if self.kind == "relu" else np.tanh(x)
        self._cache = (x, y)
        return y

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        x, y = self._cache
        return d_out * (x > 0) if self.kind == "relu" else d_out * (1.0 - y**2)

    def params(self) -> dict:
        return {}

    def set_params(self, values: dict) -> None:
        pass


class BatchNormLayer:
    def __init__(self, dim: int, epsilon: float, momentum: float):
        self.state = BatchNormState.fresh(dim, epsilon, momentum)
        self._cache = None
        self.grads = {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self.state.mode = "train" if train else "infer"
        y, cache = _bn_forward(x, self.state)
        self._cache = (cache, x.shape)
        return y

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        (xhat, inv_std), shape = self._cache
        dy = d_out.reshape(-1, d_out.shape[-1])
        n = dy.shape[0]
        self.grads = {"gamma": np.sum(dy * xhat, axis=0), "beta": np.sum(dy, axis=0)}
        dxhat = dy * self.state.gamma
        dx = (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0)
        )
        return dx.reshape(shape)

    def params(self) -> dict:
        return {"gamma": self.state.gamma, "beta": self.state.beta}

    def set_params(self, values: dict) -> None:
        self.state.gamma = values["gamma"]
        self.state.beta = values["beta"]


@dataclass
class ModelSnapshot:
    """Everything needed to rebuild a model bit-exactly."""

    config: AutoencoderConfig
    arrays: dict            # ordered name -> float64 array (params + running stats)
    metadata: dict = field(default_factory=dict)
    optimizer: tuple | None = None  # (meta dict, moment arrays keyed m./v.)


class Autoencoder:
    """The stacked sequence autoencoder; see module docstring for the layout."""

    def __init__(self, config: AutoencoderConfig):
        self.config = config
        rng = Rng(config.seed)
        self.layers = []
        in_dim = config.frame_dim
        for width in config.hidden_dims:
            self.layers.append(RecurrentLayer(config.variant, in_dim, width, rng))
            self.layers.append(ActivationLayer(config.activation))
            self.layers.append(BatchNormLayer(width, config.bn_epsilon, config.bn_momentum))
            in_dim = width
        self.layers.append(RecurrentLayer(config.variant, in_dim, config.frame_dim, rng))

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 3:
            raise ShapeError(f"expected (batch, T, frame_dim) cuboids, got {batch.shape}")
        if batch.shape[0] == 0:
            raise InvalidInputError("empty batch")
        if batch.shape[1] != self.config.seq_len or batch.shape[2] != self.config.frame_dim:
            raise ShapeError(
                f"cuboid shape {batch.shape[1:]} does not match "
                f"(T={self.config.seq_len}, frame_dim={self.config.frame_dim})"
            )
        return batch

    def forward(self, batch: np.ndarray, train: bool = False) -> np.ndarray:
        x = self._check_batch(batch).transpose(1, 0, 2)  # time-major
        for layer in self.layers:
            x = layer.forward(x, train)
        return x.transpose(1, 0, 2)

    def backward(self, d_recon: np.ndarray) -> None:
        d = np.asarray(d_recon, dtype=np.float64).transpose(1, 0, 2)
        for layer in reversed(self.layers):
            d = layer.backward(d)

    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                out[f"layer{i}.{k}"] = v
        return out

    def grads(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.grads.items():
                out[f"layer{i}.{k}"] = v
        return out

    def set_params(self, values: dict) -> None:
        for i, layer in enumerate(self.layers):
            prefix = f"layer{i}."
            sub = {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}
            layer.set_params(sub)

    def recurrent_param_total(self) -> int:
        return sum(
            cells.param_count(self.config.variant, l.weights.input_dim, l.hidden_dim)
            for l in self.layers
            if isinstance(l, RecurrentLayer)
        )

    def bn_stats(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNormLayer):
                out[f"layer{i}.running_mean"] = layer.state.running_mean
                out[f"layer{i}.running_var"] = layer.state.running_var
        return out

    def set_bn_stats(self, values: dict) -> None:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNormLayer):
                layer.state.running_mean = values[f"layer{i}.running_mean"]
                layer.state.running_var = values[f"layer{i}.running_var"]

    def to_snapshot(self, metadata: dict | None = None, optimizer: tuple | None = None) -> ModelSnapshot:
        arrays = {k: v.copy() for k, v in (self.params() | self.bn_stats()).items()}
        return ModelSnapshot(self.config, arrays, dict(metadata or {}), optimizer)

    @classmethod
    def from_snapshot(cls, snap: ModelSnapshot) -> "Autoencoder":
        model = cls(snap.config)
        model.set_params({k: v for k, v in snap.arrays.items() if not k.endswith(("running_mean", "running_var"))})
        model.set_bn_stats({k: v for k, v in snap.arrays.items() if k.endswith(("running_mean", "running_var"))})
        return model


def build_autoencoder(config: AutoencoderConfig) -> Autoencoder:
    """Construct the stacked autoencoder; deterministic given config.seed."""
    return Autoencoder(config)


def model_forward(model: Autoencoder, batch: np.ndarray, train: bool = False) -> np.ndarray:
    """Reconstruct a batch of cuboids; output shape equals input shape."""
    return model.forward(batch, train)


def mse_loss(recon: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient w.r.t. recon."""
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.shape != target.shape:
        raise ShapeError(f"loss shapes differ: {recon.shape} vs {target.shape}")
    diff = recon - target
    loss = float(np.mean(diff**2))
    return loss, 2.0 * diff / diff.size


def train_step(model: Autoencoder, batch: np.ndarray, adam_state):
    """One forward/backward/Adam-update pass; returns (loss, new_adam_state).

    The reported loss is measured before the weight update.
    """
    from .optim import adam_update

    recon = model.forward(batch, train=True)
    loss, d_recon = mse_loss(recon, np.asarray(batch, dtype=np.float64))
    model.backward(d_recon)
    new_params, new_state = adam_update(model.params(), model.grads(), adam_state)
    model.set_params(new_params)
    return loss, new_state
