"""Synthetic data, CSV ingestion and client partitioning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, PartitionError

DIRICHLET_RETRIES = 100


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError("dataset needs at least one row of features")
        if y.shape != (x.shape[0],):
            raise DataError("labels must have one entry per row")
        if not np.all(np.isfinite(x)):
            raise DataError("dataset features contain NaN or Inf")
        if self.num_classes < 2:
            raise DataError("num_classes must be >= 2")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class Shard:
    owner: int
    indices: np.ndarray

    @property
    def n_examples(self) -> int:
        return int(self.indices.size)

    def view(self, data: Dataset) -> Dataset:
        return data.subset(self.indices)


def feature_scales(input_dim: int, scale_span: float) -> np.ndarray:
    """Geometric per-coordinate ramp with max/min == scale_span and unit mean square."""
    if input_dim == 1 or scale_span == 1.0:
        return np.ones(input_dim)
    ramp = scale_span ** (np.arange(input_dim) / (input_dim - 1))
    return ramp / np.sqrt(np.mean(ramp * ramp))


def synth_generate(
    num_classes: int,
    input_dim: int,
    n_per_class: int,
    cluster_spread: float,
    seed: int,
    scale_span: float = 1.0,
) -> Dataset:
    """Gaussian blobs, one per class.

    Class means are uniform on the sphere of radius 4; points scatter around
    them with standard deviation ``cluster_spread``, so small spreads give
    well-separated point clusters.
    ``scale_span`` > 1 multiplies coordinates by a geometric ramp whose
    max/min ratio equals ``scale_span`` and whose mean square is 1, so only
    the conditioning changes, not the overall feature energy.
    """
    if num_classes < 2 or input_dim < 1 or n_per_class < 1:
        raise DataError("num_classes must be >= 2 and input_dim, n_per_class >= 1")
    if not cluster_spread > 0:
        raise DataError("cluster_spread must be positive")
    if not scale_span >= 1.0:
        raise DataError("scale_span must be >= 1")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((num_classes, input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = 4.0 * directions
    labels = np.repeat(np.arange(num_classes), n_per_class)
    noise = cluster_spread * rng.standard_normal((labels.size, input_dim))
    features = (means[labels] + noise) * feature_scales(input_dim, scale_span)
    return Dataset(features, labels, num_classes)


def partition_dirichlet(data: Dataset, num_clients: int, alpha: float, seed: int) -> list[Shard]:
    """Label-skewed split: each class is divided among clients by Dirichlet(alpha) proportions.

    The whole draw is repeated (up to 100 times) until every client owns at
    least one example.
    """
    if num_clients < 1:
        raise PartitionError("num_clients must be >= 1")
    if not alpha > 0:
        raise PartitionError("alpha must be positive")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(data.labels == c) for c in range(data.num_classes)]
    for _ in range(DIRICHLET_RETRIES):
        owned: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for idx in by_class:
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(num_clients, alpha))
            cuts = np.floor(np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for client, part in enumerate(np.split(idx, cuts)):
                owned[client].append(part)
        sizes = [sum(p.size for p in parts) for parts in owned]
        if min(sizes) >= 1:
            return [Shard(i, np.sort(np.concatenate(parts))) for i, parts in enumerate(owned)]
    raise PartitionError(
        f"could not give all {num_clients} clients an example after {DIRICHLET_RETRIES} "
        f"Dirichlet draws (n={len(data)}, alpha={alpha}); use more data or a larger alpha"
    )


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights`` (ties: lower index)."""
    quotas = weights / weights.sum() * total
    sizes = np.floor(quotas).astype(np.int64)
    remainders = quotas - sizes
    short = total - int(sizes.sum())
    # stable sort on -remainder keeps lower indices first among equals
    order = np.argsort(-remainders, kind="stable")
    sizes[order[:short]] += 1
    return sizes


def partition_quantity_skew(data: Dataset, num_clients: int, zipf_s: float, seed: int) -> list[Shard]:
    """Unbalanced split with shard sizes proportional to rank**(-zipf_s)."""
    n = len(data)
    if num_clients < 1:
        raise PartitionError("num_clients must be >= 1")
    if num_clients > n:
        raise PartitionError(f"cannot split {n} examples across {num_clients} clients")
    if zipf_s < 0:
        raise PartitionError("zipf_s must be >= 0")
    ranks = np.arange(1, num_clients + 1, dtype=np.float64)
    sizes = largest_remainder(ranks ** (-zipf_s), n)
    while sizes.min() == 0:
        sizes[int(np.argmax(sizes))] -= 1
        sizes[int(np.argmin(sizes))] += 1
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.split(perm, np.cumsum(sizes)[:-1])
    return [Shard(i, np.sort(p)) for i, p in enumerate(parts)]


def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"unparsable cell {cell!r} at row {row}, column {col}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {cell!r} at row {row}, column {col}")
    return value


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path: str | Path, label_column: str | int, num_classes: int) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    A first row whose first cell is non-numeric is treated as a header. The
    label column is chosen by header name or by 0-based index; every other
    column becomes a feature, in file order. Row and column numbers in error
    messages are 1-based.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such CSV file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path} contains no data")

    header = None
    if not _is_number(rows[0][1][0].strip()):
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path} has a header but no data rows")

    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None:
            raise DataError(f"label column {label_column!r} given by name but {path} has no header")
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)

    width = len(rows[0][1])
    if not 0 <= label_idx < width:
        raise DataError(f"label column index {label_idx} out of range for {width} columns")

    features, labels = [], []
    for lineno, row in rows:
        if len(row) != width:
            raise DataError(f"row {lineno} has {len(row)} columns, expected {width}")
        values = [_parse_float(c.strip(), lineno, j + 1) for j, c in enumerate(row)]
        label = values.pop(label_idx)
        if label != int(label) or not 0 <= label < num_classes:
            raise DataError(f"label {row[label_idx]!r} at row {lineno} outside [0, {num_classes})")
        features.append(values)
        labels.append(int(label))
    if width < 2:
        raise DataError("CSV needs at least one feature column besides the label")
    return Dataset(np.array(features, dtype=np.float64), np.array(labels), num_classes)


def write_csv(data: Dataset, path: str | Path) -> None:
    """Write features and a trailing ``label`` column, with a header row."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(data.input_dim)] + ["label"])
        for x, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
