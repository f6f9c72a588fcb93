"""Epoch loop: shuffled minibatches, per-epoch validation and best-model
tracking by validation AUC (ties broken by lower EER)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError
from .network import Autoencoder, model_forward, mse_loss, train_step
from .numerics import Rng
from .optim import AdamState, init_adam


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_seconds: float
    val_auc: float | None = None
    val_eer: float | None = None


@dataclass
class TrainResult:
    model: Autoencoder
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    best_arrays: dict | None = None
    adam_state: AdamState | None = None

    def restore_best(self) -> Autoencoder:
        """Return the model rolled back to the best-validation epoch."""
        if self.best_arrays is None:
            return self.model
        self.model.set_params(
            {k: v for k, v in self.best_arrays.items()
             if not k.endswith(("running_mean", "running_var"))}
        )
        self.model.set_bn_stats(
            {k: v for k, v in self.best_arrays.items()
             if k.endswith(("running_mean", "running_var"))}
        )
        return self.model


def _batches(n: int, batch_size: int, perm: np.ndarray):
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        if len(idx) < 2:
            break  # batch norm needs at least 2 cuboids
        yield idx


def train_model(
    model: Autoencoder,
    train_cuboids: np.ndarray,
    val_cuboids: np.ndarray,
    epochs: int,
    batch_size: int = 8,
    lr: float = 1e-5,
    shuffle_seed: int = 0,
    eval_fn=None,
    epoch_callback=None,
    adam_state: AdamState | None = None,
    start_epoch: int = 0,
) -> TrainResult:
    """Train in place; returns the loss history and best-epoch weights.

    eval_fn(model) may return (auc, eer) per epoch; the snapshot with the
    highest AUC (lower EER on ties) is kept. epoch_callback(model, record,
    adam_state) runs after each epoch for logging/serialization.
    """
    if len(train_cuboids) < 2:
        raise DegenerateDataError("need at least 2 training cuboids")
    state = adam_state if adam_state is not None else init_adam(model.params(), lr=lr)
    shuffle_rng = Rng(shuffle_seed)
    result = TrainResult(model, adam_state=state)
    best_key = None

    for epoch in range(start_epoch, start_epoch + epochs):
        t0 = time.perf_counter()
        perm = shuffle_rng.child(epoch).permutation(len(train_cuboids))
        losses = []
        for idx in _batches(len(train_cuboids), batch_size, perm):
            loss, state = train_step(model, train_cuboids[idx], state)
            losses.append(loss)
        train_loss = float(np.mean(losses)) if losses else float("nan")

        if len(val_cuboids):
            recon = model_forward(model, val_cuboids, train=False)
            val_loss = mse_loss(recon, val_cuboids)[0]
        else:
            val_loss = float("nan")

        record = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - t0)
        if eval_fn is not None:
            record.val_auc, record.val_eer = eval_fn(model)
            key = (record.val_auc, -record.val_eer)
            if best_key is None or key > best_key:
                best_key = key
                result.best_epoch = epoch
                result.best_arrays = {
                    k: v.copy() for k, v in (model.params() | model.bn_stats()).items()
                }
        result.history.append(record)
        if epoch_callback is not None:
            epoch_callback(model, record, state)

    result.adam_state = state
    return result
