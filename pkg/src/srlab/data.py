"""CSV ingestion, train/validation/test partitioning, feature
standardization and regression metrics."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

TRAIN, VALIDATION, TEST = "train", "validation", "test"


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    target: np.ndarray
    column_names: tuple[str, ...]
    target_name: str = "y"
    partition: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.target, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DataError(f"inconsistent shapes {X.shape} and {y.shape}")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("dataset contains non-finite values")
        if len(self.column_names) != X.shape[1]:
            raise DataError("column_names length does not match feature count")
        part = self.partition
        if part is None:
            part = np.full(len(y), TRAIN, dtype=object)
        part = np.asarray(part, dtype=object)
        if part.shape != y.shape or not set(part) <= {TRAIN, VALIDATION, TEST}:
            raise DataError("partition tags must cover all rows")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "partition", part)

    @property
    def n_rows(self) -> int:
        return len(self.target)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def rows(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.partition == tag
        return self.features[mask], self.target[mask]

    @property
    def train(self):
        return self.rows(TRAIN)

    @property
    def validation(self):
        return self.rows(VALIDATION)

    @property
    def test(self):
        return self.rows(TEST)


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric matrix of a comma-separated file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(rec)} cells, expected {len(header)}")
            vals = []
            for name, cell in zip(header, rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {name!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite cell at row {lineno}, column {name!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def load_csv(path, target_column: str | None = None) -> Dataset:
    """Read a comma-separated file with a header row.

    The target defaults to the last column.
    """
    header, data = read_table(path)
    if target_column is None:
        target_column = header[-1]
    if target_column not in header:
        raise DataError(f"{path}: target column {target_column!r} not in header")
    t = header.index(target_column)
    keep = [i for i in range(len(header)) if i != t]
    return Dataset(data[:, keep], data[:, t], tuple(header[i] for i in keep), target_column)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(dataset: Dataset, test_fraction: float = 0.25,
          validation_fraction: float = 0.25, seed: int = 0) -> Dataset:
    """Tag rows as train/validation/test.

    ``|test| = round(test_fraction * rows)`` and the validation rows are
    ``round(validation_fraction * remaining)`` of the non-test rows.
    """
    for f in (test_fraction, validation_fraction):
        if not 0.0 <= f < 1.0:
            raise DataError("fractions must lie in [0, 1)")
    n = dataset.n_rows
    n_test = _round_half_up(test_fraction * n)
    n_val = _round_half_up(validation_fraction * (n - n_test))
    if (test_fraction > 0 and n_test == 0) or (validation_fraction > 0 and n_val == 0):
        raise DataError("a requested partition would be empty")
    if n - n_test - n_val <= 0:
        raise DataError("training partition would be empty")
    order = np.random.default_rng(seed).permutation(n)
    part = np.full(n, TRAIN, dtype=object)
    part[order[:n_test]] = TEST
    part[order[n_test:n_test + n_val]] = VALIDATION
    return replace(dataset, partition=part)


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, tol: float = 1e-12) -> StandardizationStats:
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        constant = std <= tol
        if constant.any():
            log.warning("constant features left unscaled: %s", np.flatnonzero(constant).tolist())
        return cls(np.where(constant, 0.0, mean), np.where(constant, 1.0, std), constant)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std


def standardize(dataset: Dataset) -> tuple[Dataset, StandardizationStats]:
    """Scale features with statistics from the training rows only."""
    stats = StandardizationStats.fit(dataset.train[0])
    return replace(dataset, features=stats.apply(dataset.features)), stats


# --- metrics ---------------------------------------------------------------


def _pair(yhat, y):
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    if yhat.shape != y.shape or y.ndim != 1 or len(y) < 2:
        raise ValueError("yhat and y must be 1-D of equal length >= 2")
    return yhat, y


def mse(yhat, y) -> float:
    yhat, y = _pair(yhat, y)
    with np.errstate(all="ignore"):
        return float(np.mean((yhat - y) ** 2))


def nmse(yhat, y) -> float:
    yhat, y = _pair(yhat, y)
    var = float(np.var(y))
    if var == 0.0:
        raise ValueError("target has zero variance")
    return mse(yhat, y) / var


def r2(yhat, y) -> float:
    yhat, y = _pair(yhat, y)
    tss = float(np.sum((y - y.mean()) ** 2))
    if tss == 0.0:
        raise ValueError("target has zero variance")
    with np.errstate(all="ignore"):
        rss = float(np.sum((yhat - y) ** 2))
    return 1.0 - rss / tss
