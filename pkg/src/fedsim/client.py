"""Local client training: mini-batch SGD with heavy-ball momentum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from . import params as pv
from .data import Dataset
from .errors import DimensionMismatchError, DivergenceError


@dataclass(frozen=True)
class ClientConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    local_epochs: int = 1
    batch_size: int = 32
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("client learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("client momentum must be in [0, 1)")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    delta: pv.ParamVector
    n_examples: int
    samples_processed: int
    local_loss_before: float
    local_loss_after: float
    # final local model; only kept while the delta travels uncompressed
    params: pv.ParamVector | None = None


def local_train(
    spec: models.ModelSpec,
    global_params: pv.ParamVector,
    shard: Dataset,
    cfg: ClientConfig,
    rng: np.random.Generator,
    client_id: int = 0,
) -> ClientUpdate:
    """Train a private copy of ``global_params`` on ``shard`` and return old minus new.

    Velocity starts at zero every call, so clients carry no state between
    rounds. The trailing partial batch of each epoch is kept.
    """
    n = len(shard)
    if n == 0:
        raise ValueError(f"client {client_id} has an empty shard")
    if global_params.shape != (spec.dim,):
        raise DimensionMismatchError(global_params.size, spec.dim, "global params and model")

    loss_before = models.loss(spec, global_params, shard)
    if cfg.local_epochs == 0:
        return ClientUpdate(client_id, pv.zeros(spec.dim), n, 0, loss_before, loss_before, global_params)

    x = np.array(global_params, dtype=np.float64)
    velocity = np.zeros_like(x)
    step = 0
    processed = 0
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = models.Batch(shard.features[idx], shard.labels[idx])
            try:
                g = models.grad(spec, x, batch)
            except DivergenceError as exc:
                raise DivergenceError(f"client {client_id} diverged at local step {step}: {exc}") from exc
            with np.errstate(over="ignore", invalid="ignore"):
                velocity = cfg.momentum * velocity + g
                x = x - cfg.learning_rate * velocity
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"client {client_id} diverged at local step {step}")
            step += 1
            processed += idx.size

    loss_after = models.loss(spec, x, shard)
    delta = pv.freeze(global_params - x)
    return ClientUpdate(client_id, delta, n, processed, loss_before, loss_after, pv.freeze(x))
