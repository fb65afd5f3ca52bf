"""Server-side aggregation and update rules.

Deltas are pseudo-gradients (old global minus new local), so every rule
moves the global parameters *against* the aggregated delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from . import params as pv
from .client import ClientUpdate
from .errors import DimensionMismatchError, DivergenceError

Rule = Literal["fedavg", "fedavgm", "fedadagrad", "fedadam", "fedyogi"]
Weighting = Literal["uniform", "by_examples"]

RULES: tuple[str, ...] = ("fedavg", "fedavgm", "fedadagrad", "fedadam", "fedyogi")
ADAPTIVE_RULES = frozenset({"fedadagrad", "fedadam", "fedyogi"})


@dataclass(frozen=True)
class ServerHyper:
    lr: float | None = None  # None: 1.0 for fedavg/fedavgm, 0.01 for adaptive rules
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3
    v0: float | None = None  # None: tau**2

    def resolved_lr(self, rule: str) -> float:
        if self.lr is not None:
            return self.lr
        return 0.01 if rule in ADAPTIVE_RULES else 1.0


@dataclass(frozen=True)
class ServerOptimizerState:
    rule: Rule
    params: pv.ParamVector
    m: pv.ParamVector
    v: pv.ParamVector
    hyper: ServerHyper = field(default_factory=ServerHyper)
    round: int = 0


def init_state(rule: Rule, params: pv.ParamVector, hyper: ServerHyper | None = None) -> ServerOptimizerState:
    if rule not in RULES:
        raise ValueError(f"unknown server rule {rule!r}; expected one of {RULES}")
    hyper = hyper or ServerHyper()
    if hyper.resolved_lr(rule) <= 0:
        raise ValueError("server lr must be > 0")
    if not 0 <= hyper.beta1 < 1 or not 0 <= hyper.beta2 < 1:
        raise ValueError("beta1 and beta2 must be in [0, 1)")
    if not hyper.tau > 0:
        raise ValueError("tau must be > 0")
    dim = params.size
    v0 = hyper.tau ** 2 if hyper.v0 is None else hyper.v0
    if rule in ADAPTIVE_RULES:
        v = pv.freeze(np.full(dim, float(v0)))
    else:
        v = pv.zeros(dim)
    return ServerOptimizerState(rule, pv.as_params(params), pv.zeros(dim), v, hyper, 0)


@dataclass(frozen=True)
class ServerDelta:
    delta: pv.ParamVector
    total_examples: int
    num_updates: int
    # (weight, delta, final local params or None) per client in ascending client id;
    # lets fedavg average the client models directly
    contributions: tuple[tuple[float, pv.ParamVector, pv.ParamVector | None], ...] = ()
    weighting: Weighting = "uniform"


def aggregate(updates: Sequence[ClientUpdate], weighting: Weighting = "uniform") -> ServerDelta:
    """Average client deltas in ascending client-id order."""
    if not updates:
        raise ValueError("aggregate needs at least one client update")
    if weighting not in ("uniform", "by_examples"):
        raise ValueError(f"unknown weighting {weighting!r}")
    ordered = sorted(updates, key=lambda u: u.client_id)
    dim = ordered[0].delta.size
    for u in ordered:
        if u.delta.size != dim:
            raise DimensionMismatchError(u.delta.size, dim, f"client {u.client_id} delta and others")
    total = sum(u.n_examples for u in ordered)
    k = len(ordered)

    acc = np.zeros(dim)
    if weighting == "uniform":
        for u in ordered:
            acc = acc + u.delta
        mean = acc / k
        weights = [1.0 / k] * k
    else:
        if total <= 0:
            raise ValueError("by_examples weighting needs a positive example count")
        for u in ordered:
            acc = acc + u.n_examples * u.delta
        mean = acc / total
        weights = [u.n_examples / total for u in ordered]
    contributions = tuple((w, u.delta, u.params) for w, u in zip(weights, ordered))
    return ServerDelta(pv.freeze(mean), total, k, contributions, weighting)


def _average_models(x: np.ndarray, agg: ServerDelta, lr: float) -> np.ndarray:
    # Mean of the client models, summed in client order and then clamped to
    # the per-coordinate range of those models (removes the rounding drift of
    # sum-then-divide when models coincide). At lr == 1 the client models are
    # the clients' own final params when available, else x - lr*delta_i.
    models_ = [
        p if p is not None and lr == 1.0 else x - lr * d
        for _, d, p in agg.contributions
    ]
    acc = np.zeros_like(x)
    if agg.weighting == "uniform":
        for mdl in models_:
            acc = acc + mdl
        mean = acc / len(models_)
    else:
        total = agg.total_examples
        for (w, _, _), mdl in zip(agg.contributions, models_):
            acc = acc + round(w * total) * mdl
        mean = acc / total
    stacked = np.stack(models_)
    return np.clip(mean, stacked.min(axis=0), stacked.max(axis=0))


def server_step(state: ServerOptimizerState, agg: ServerDelta) -> ServerOptimizerState:
    """Apply one round of the configured server rule; returns a new state."""
    x, d = state.params, agg.delta
    if d.shape != x.shape:
        raise DimensionMismatchError(d.size, x.size, "aggregated delta and server params")
    h = state.hyper
    lr = h.resolved_lr(state.rule)
    m, v = state.m, state.v

    # overflow is reported below as a DivergenceError rather than a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        if state.rule == "fedavg":
            if agg.contributions:
                new_x = _average_models(x, agg, lr)
            else:
                new_x = x - lr * d
        elif state.rule == "fedavgm":
            m = h.beta1 * m + d
            new_x = x - lr * m
        else:
            m = h.beta1 * m + (1.0 - h.beta1) * d
            d2 = d * d
            if state.rule == "fedadagrad":
                v = v + d2
            elif state.rule == "fedadam":
                v = h.beta2 * v + (1.0 - h.beta2) * d2
            else:
                v = v - (1.0 - h.beta2) * d2 * np.sign(v - d2)
            new_x = x - lr * m / (np.sqrt(np.maximum(v, 0.0)) + h.tau)

    for name, arr in (("params", new_x), ("momentum", m), ("second moment", v)):
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(f"{state.rule} produced non-finite {name} at server round {state.round}")
    return replace(
        state,
        params=pv.freeze(np.asarray(new_x, dtype=np.float64)),
        m=pv.freeze(np.asarray(m, dtype=np.float64)),
        v=pv.freeze(np.asarray(v, dtype=np.float64)),
        round=state.round + 1,
    )
