"""Small softmax classifiers with hand-written gradients.

Two model families are available: multinomial logistic regression and a
one-hidden-layer tanh MLP. Parameters live in one flat vector; the
``layout`` of a :class:`ModelSpec` maps named blocks onto it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np

from . import params as pv
from .errors import DataError, DimensionMismatchError, DivergenceError

ModelKind = Literal["logistic_regression", "mlp_one_hidden"]


class LayoutEntry(NamedTuple):
    name: str
    offset: int
    rows: int
    cols: int

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def is_matrix(self) -> bool:
        return self.rows > 1 and self.cols > 1


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    input_dim: int
    num_classes: int
    hidden_dim: int | None = None
    layout: tuple[LayoutEntry, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.kind == "logistic_regression":
            blocks = [("weight", self.num_classes, self.input_dim), ("bias", 1, self.num_classes)]
        elif self.kind == "mlp_one_hidden":
            if not self.hidden_dim or self.hidden_dim < 1:
                raise ValueError("mlp_one_hidden needs a positive hidden_dim")
            h = self.hidden_dim
            blocks = [
                ("hidden.weight", h, self.input_dim),
                ("hidden.bias", 1, h),
                ("out.weight", self.num_classes, h),
                ("out.bias", 1, self.num_classes),
            ]
        else:
            raise ValueError(f"unknown model kind {self.kind!r}")
        layout, offset = [], 0
        for name, rows, cols in blocks:
            layout.append(LayoutEntry(name, offset, rows, cols))
            offset += rows * cols
        object.__setattr__(self, "layout", tuple(layout))

    @property
    def dim(self) -> int:
        last = self.layout[-1]
        return last.offset + last.size

    def unpack(self, params: np.ndarray) -> dict[str, np.ndarray]:
        """Views of each layout block, shaped (rows, cols); bias blocks are flattened."""
        if params.shape != (self.dim,):
            raise DimensionMismatchError(params.size, self.dim, "params and model layout")
        out = {}
        for e in self.layout:
            block = params[e.offset:e.offset + e.size].reshape(e.rows, e.cols)
            out[e.name] = block[0] if e.name.endswith("bias") else block
        return out


def logistic_regression(input_dim: int, num_classes: int) -> ModelSpec:
    return ModelSpec("logistic_regression", input_dim, num_classes)


def mlp(input_dim: int, num_classes: int, hidden_dim: int) -> ModelSpec:
    return ModelSpec("mlp_one_hidden", input_dim, num_classes, hidden_dim)


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError("batch features must be a non-empty 2-D matrix")
        if y.shape != (x.shape[0],):
            raise DataError(f"expected {x.shape[0]} labels, got shape {y.shape}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self) -> int:
        return self.features.shape[0]


def init_params(spec: ModelSpec, rng: np.random.Generator) -> pv.ParamVector:
    """Per-layer uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases share their layer's fan-in."""
    out = np.empty(spec.dim)
    fan_in = spec.input_dim
    for e in spec.layout:
        if not e.name.endswith("bias"):
            fan_in = e.cols
        bound = 1.0 / np.sqrt(fan_in)
        out[e.offset:e.offset + e.size] = rng.uniform(-bound, bound, size=e.size)
    return pv.freeze(out)


def _check_batch(spec: ModelSpec, batch) -> tuple[np.ndarray, np.ndarray]:
    x, y = batch.features, batch.labels
    if x.shape[1] != spec.input_dim:
        raise DimensionMismatchError(x.shape[1], spec.input_dim, "batch features and model input")
    if y.size and (y.min() < 0 or y.max() >= spec.num_classes):
        raise DataError(f"labels must lie in [0, {spec.num_classes})")
    return x, y


def _forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray):
    p = spec.unpack(params)
    # overflow surfaces as a non-finite loss/gradient, reported by the callers
    with np.errstate(over="ignore", invalid="ignore"):
        if spec.kind == "logistic_regression":
            return x @ p["weight"].T + p["bias"], None
        h = np.tanh(x @ p["hidden.weight"].T + p["hidden.bias"])
        return h @ p["out.weight"].T + p["out.bias"], h


def _log_softmax(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        zmax = z.max(axis=1, keepdims=True)
        shifted = z - zmax
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(spec: ModelSpec, params: pv.ParamVector, batch) -> float:
    """Mean softmax cross-entropy over the batch."""
    x, y = _check_batch(spec, batch)
    logits, _ = _forward(spec, params, x)
    logp = _log_softmax(logits)
    value = float(-np.mean(logp[np.arange(len(y)), y]))
    if not np.isfinite(value):
        raise DivergenceError("non-finite loss; parameters have likely exploded")
    return value


def grad(spec: ModelSpec, params: pv.ParamVector, batch) -> pv.ParamVector:
    x, y = _check_batch(spec, batch)
    n = x.shape[0]
    logits, h = _forward(spec, params, x)
    g = np.exp(_log_softmax(logits))
    g[np.arange(n), y] -= 1.0
    g /= n

    p = spec.unpack(params)
    out = np.empty(spec.dim)
    blocks = {}
    if spec.kind == "logistic_regression":
        blocks["weight"] = g.T @ x
        blocks["bias"] = g.sum(axis=0)
    else:
        blocks["out.weight"] = g.T @ h
        blocks["out.bias"] = g.sum(axis=0)
        pre = (g @ p["out.weight"]) * (1.0 - h * h)
        blocks["hidden.weight"] = pre.T @ x
        blocks["hidden.bias"] = pre.sum(axis=0)
    for e in spec.layout:
        out[e.offset:e.offset + e.size] = blocks[e.name].reshape(-1)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite gradient; parameters have likely exploded")
    return pv.freeze(out)


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    mean_loss: float


def evaluate(spec: ModelSpec, params: pv.ParamVector, data) -> Evaluation:
    """Accuracy and mean loss on anything exposing ``features`` and ``labels``.

    Ties in the argmax go to the lowest class index.
    """
    if len(data.labels) == 0:
        raise DataError("cannot evaluate on an empty shard")
    x, y = _check_batch(spec, data)
    logits, _ = _forward(spec, params, x)
    pred = np.argmax(logits, axis=1)
    logp = _log_softmax(logits)
    mean_loss = float(-np.mean(logp[np.arange(len(y)), y]))
    if not np.isfinite(mean_loss):
        raise DivergenceError("non-finite evaluation loss")
    return Evaluation(accuracy=float(np.mean(pred == y)), mean_loss=mean_loss)
