"""Dataset ingestion, train/test splitting and z-score standardization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed input files or infeasible splits."""


@dataclass(frozen=True)
class Dataset:
    """Labeled feature matrix.

    Attributes
    ----------
    X : np.ndarray
        ``(n, d)`` float64 feature matrix.
    y : np.ndarray
        ``(n,)`` integer labels in ``[0, Q)``.
    Q : int
        Number of classes.
    feature_names : tuple of str, optional
        Column names when the source file had a header.
    labels : tuple of str
        Original label values; ``labels[k]`` is the value encoded as ``k``.
    """

    X: np.ndarray
    y: np.ndarray
    Q: int
    feature_names: tuple[str, ...] | None = None
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"X must be a non-empty 2-d matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if self.Q < 2:
            raise DataError(f"need at least 2 classes, got Q={self.Q}")
        if y.min() < 0 or y.max() >= self.Q:
            raise DataError(f"labels must lie in [0, {self.Q})")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains NaN or Inf")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(k) for k in range(self.Q)))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx])


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise DataError(f"expected {self.mean.shape[0]} features, got {X.shape[-1]}")
        return (X - self.mean) / self.std


def resolve_label_column(label_column, header, ncols):
    if isinstance(label_column, str) and not _is_int(label_column):
        if header is None:
            raise DataError(f"label column {label_column!r} given by name but file has no header")
        try:
            return header.index(label_column)
        except ValueError:
            raise DataError(f"label column {label_column!r} not found in header") from None
    idx = int(label_column)
    if idx < 0:
        idx += ncols
    if not 0 <= idx < ncols:
        raise DataError(f"label column index {label_column} out of range for {ncols} columns")
    return idx


def _is_int(s) -> bool:
    try:
        int(s)
    except (TypeError, ValueError):
        return False
    return True


def read_rows(path, has_header=False):
    """Read a CSV file into ``(header, rows)``; rows are lists of stripped strings."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            raw = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    raw = [[c.strip() for c in row] for row in raw]
    header = raw.pop(0) if has_header and raw else None
    if not raw:
        raise DataError(f"{path} contains no data rows")
    ncols = len(header) if header is not None else len(raw[0])
    for lineno, row in enumerate(raw, start=2 if header is not None else 1):
        if len(row) != ncols:
            raise DataError(f"{path}: row {lineno} has {len(row)} columns, expected {ncols}")
    return header, raw


def parse_features(rows, path="<input>", first_line=1) -> np.ndarray:
    X = np.empty((len(rows), len(rows[0])), dtype=np.float64)
    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            try:
                X[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric feature {cell!r} at row {i + first_line}, column {j}"
                ) from None
    return X


def load_csv(path, label_column=-1, has_header=False) -> Dataset:
    """Load a comma-separated file with one label column.

    Labels are re-encoded to ``0..Q-1`` in order of first appearance; the
    original values are kept in ``Dataset.labels``.
    """
    header, rows = read_rows(path, has_header)
    ncols = len(rows[0])
    li = resolve_label_column(label_column, header, ncols)
    if ncols < 2:
        raise DataError(f"{path}: need at least one feature column besides the label")

    codes: dict[str, int] = {}
    y = np.array([codes.setdefault(row[li], len(codes)) for row in rows], dtype=np.int64)
    if len(codes) < 2:
        raise DataError(f"{path}: fewer than 2 distinct labels")

    feats = [row[:li] + row[li + 1:] for row in rows]
    X = parse_features(feats, path, 2 if header is not None else 1)
    names = None
    if header is not None:
        names = tuple(header[:li] + header[li + 1:])
    return Dataset(X, y, len(codes), names, tuple(codes))


def split(ds: Dataset, train_fraction: float, seed: int, max_tries: int = 100):
    """Random train/test partition with every class present in the training part.

    The permutation is re-drawn (up to ``max_tries`` times) until the training
    part contains at least one instance of each class.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_train = int(round(train_fraction * ds.n))
    if not 0 < n_train < ds.n:
        raise DataError(f"split of n={ds.n} at {train_fraction} leaves an empty part")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        perm = rng.permutation(ds.n)
        tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        if np.unique(ds.y[tr]).size == ds.Q:
            return ds.subset(tr), ds.subset(te)
    raise DataError(f"could not place every class in the training part after {max_tries} draws")


def stratified_split(ds: Dataset, holdout_fraction: float, seed: int):
    """Split off a holdout part per class; classes with a single instance stay in the first part."""
    rng = np.random.default_rng(seed)
    keep, hold = [], []
    for c in range(ds.Q):
        idx = np.flatnonzero(ds.y == c)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(holdout_fraction * idx.size))
        k = min(k, idx.size - 1)
        hold.append(idx[:k])
        keep.append(idx[k:])
    keep, hold = np.sort(np.concatenate(keep)), np.sort(np.concatenate(hold))
    if hold.size == 0:
        raise DataError("holdout part is empty; dataset too small")
    return ds.subset(keep), ds.subset(hold)


def fit_standardization(X) -> StandardizationStats:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    const = std == 0.0
    std[const] = 1.0
    # constant columns pass through unchanged
    mean[const] = 0.0
    return StandardizationStats(mean, std)


def standardize(train: Dataset, test: Dataset):
    stats = fit_standardization(train.X)
    return (
        replace(train, X=stats.apply(train.X)),
        replace(test, X=stats.apply(test.X)),
        stats,
    )
