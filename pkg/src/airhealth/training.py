"""Seeded, reproducible training loop for the MLP regressor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, DomainError, NumericError
from .nn import MlpRegressor, Mode, backprop_gradients
from .optim import AdamState, adam_step
from .tensor import as_array, seeded_rng

__all__ = ["TrainConfig", "train_regressor"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8


def train_regressor(model: MlpRegressor, features, targets, config: TrainConfig):
    """Train a copy of `model` on (features, targets) and return
    (trained_model, loss_history).

    Pure in its inputs: the passed model is not mutated, and identical
    (model, data order, config) give bit-identical results. The history
    holds one mean training loss per epoch.
    """
    x = as_array(features, ndim=2, name="features")
    y = as_array(targets, ndim=2, name="targets")
    n = x.shape[0]
    if n == 0:
        raise DomainError("training dataset is empty")
    if y.shape[0] != n:
        raise DomainError(f"features/targets row counts differ: {n} vs {y.shape[0]}")
    if y.shape[1] != MlpRegressor.OUTPUT_DIM:
        raise DomainError(f"targets must be {MlpRegressor.OUTPUT_DIM}-wide, got {y.shape[1]}")
    if config.epochs < 1:
        raise DomainError("epochs must be >= 1")

    trained = model.clone()
    rng = seeded_rng(config.seed)
    params = trained.parameters()
    state = AdamState.create_for(
        params,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.adam_epsilon,
    )

    # Batch-norm needs >= 2 rows; merge a trailing singleton into the
    # previous batch.
    batch = max(2, min(config.batch_size, n))
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        starts = list(range(0, n, batch))
        if len(starts) > 1 and n - starts[-1] < 2:
            starts.pop()
        total_sq = 0.0
        for s_idx, start in enumerate(starts):
            stop = n if s_idx == len(starts) - 1 else start + batch
            idx = order[start:stop]
            try:
                grads, loss, _ = backprop_gradients(
                    trained, x[idx], y[idx], mode=Mode.TRAIN, rng=rng
                )
            except NumericError as exc:
                raise DivergenceError(
                    f"training produced non-finite values at epoch {epoch}: {exc}",
                    epoch,
                ) from exc
            if not math.isfinite(loss):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch}", epoch)
            total_sq += loss * idx.size
            adam_step(params, grads, state)
        history.append(total_sq / n)
    return trained, history
