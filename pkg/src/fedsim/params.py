"""Flat parameter-vector algebra.

A parameter vector is a 1-D, read-only ``float64`` numpy array. Every function
here returns a fresh array and never writes into its arguments. Reductions run
in ascending index order (``np.cumsum`` is strictly sequential), so repeated
runs give bit-identical results independent of BLAS threading.
"""

from __future__ import annotations

from typing import Iterable, Literal

import numpy as np

from .errors import DimensionMismatchError, DivergenceError, DomainError

ParamVector = np.ndarray


def freeze(arr: np.ndarray) -> ParamVector:
    arr.setflags(write=False)
    return arr


def as_params(values: Iterable[float] | np.ndarray) -> ParamVector:
    """Copy ``values`` into a new frozen float64 vector, validating shape and finiteness."""
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if arr.size < 1:
        raise ValueError("parameter vector must have dim >= 1")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise DivergenceError(f"non-finite parameter entry at index {bad}")
    return freeze(arr)


def zeros(dim: int) -> ParamVector:
    if dim < 1:
        raise ValueError("parameter vector must have dim >= 1")
    return freeze(np.zeros(dim, dtype=np.float64))


def _check_dims(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionMismatchError(x.size, y.size)


def _finite(out: np.ndarray, op: str) -> ParamVector:
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise DivergenceError(f"{op} produced a non-finite entry at index {bad}")
    return freeze(out)


def axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``a * x + y``."""
    _check_dims(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * x + y
    return _finite(out, "axpy")


def scale(a: float, x: ParamVector) -> ParamVector:
    return axpy(a, x, np.zeros_like(x))


def hadamard(x: ParamVector, y: ParamVector) -> ParamVector:
    _check_dims(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        out = x * y
    return _finite(out, "hadamard")


def elem_map(kind: Literal["sign", "sqrt", "abs"], x: ParamVector) -> ParamVector:
    if kind == "sign":
        out = np.sign(x)
    elif kind == "abs":
        out = np.abs(x)
    elif kind == "sqrt":
        neg = np.flatnonzero(x < 0)
        if neg.size:
            i = int(neg[0])
            raise DomainError(f"sqrt of negative entry {x[i]!r} at index {i}", index=i)
        out = np.sqrt(x)
    else:
        raise ValueError(f"unknown elementwise map {kind!r}")
    return _finite(out.astype(np.float64, copy=False), kind)


def ordered_sum(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    return float(np.cumsum(x, dtype=np.float64)[-1])


def dot(x: ParamVector, y: ParamVector) -> float:
    _check_dims(x, y)
    return ordered_sum(x * y)


def norm(x: ParamVector) -> float:
    return float(np.sqrt(dot(x, x)))
