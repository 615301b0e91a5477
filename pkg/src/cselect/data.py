"""Tabular dataset handling: CSV ingestion, seeded splits, synthetic generators.

Datasets are plain containers around a float feature matrix and a target
vector. Splitting permutes rows with a seeded generator and partitions by
cumulative fraction, so the same (data, seed, fractions) always produces the
same split. Feature standardization statistics are fitted on the training
part only and applied to all parts, which keeps distance-based and
gradient-trained models on comparable scales without leaking test data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .validation import as_float_matrix, as_float_vector, snapped_floor

MIN_ROWS = 10


class DataError(ValueError):
    """Raised when an input table cannot be turned into a usable dataset."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with aligned targets.

    ``dropped_rows`` records how many source rows were discarded during
    ingestion (unparseable, missing, or non-finite cells).
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    dropped_rows: int = 0

    def __post_init__(self):
        X = as_float_matrix(self.X)
        y = as_float_vector(self.y)
        if X.shape[0] != y.shape[0]:
            raise DataError(
                f"feature matrix has {X.shape[0]} rows, targets have {y.shape[0]}"
            )
        if X.shape[0] < 1:
            raise DataError("dataset has no rows")
        if X.shape[1] < 1:
            raise DataError("dataset has no feature columns")
        if len(self.feature_names) != X.shape[1]:
            raise DataError(
                f"{len(self.feature_names)} feature names for {X.shape[1]} columns"
            )
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("dataset contains NaN or infinite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.X[indices], self.y[indices], self.feature_names)


@dataclass(frozen=True, eq=False)
class DataSplit:
    """Disjoint train/cal/test partition of a source dataset.

    The index arrays refer to rows of the source dataset and together form a
    permutation of ``range(n)``. When ``standardized`` is true the feature
    matrices of all three parts have been shifted and scaled by statistics
    fitted on the training rows (``feature_mean``, ``feature_scale``).
    """

    train: Dataset
    cal: Dataset
    test: Dataset
    seed: int
    fractions: tuple[float, float, float]
    train_idx: np.ndarray
    cal_idx: np.ndarray
    test_idx: np.ndarray
    standardized: bool = True
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None


def check_fractions(fractions) -> tuple[float, float, float]:
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3:
        raise ValueError(f"expected 3 fractions, got {len(fr)}")
    if any(f <= 0.0 for f in fr):
        raise ValueError(f"fractions must be positive, got {fr}")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1.0, got sum {sum(fr)!r}")
    return fr


def split_dataset(data: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 0,
                  standardize: bool = True) -> DataSplit:
    """Partition ``data`` into train/cal/test parts.

    Rows are shuffled by a generator seeded with ``seed`` and cut by
    cumulative fraction: train and cal get ``floor(fraction * n)`` rows and
    test receives the remainder, so the three parts partition the dataset
    exactly. Raises if any part would be empty.
    """
    fr = check_fractions(fractions)
    n = data.n_rows
    n_train = snapped_floor(fr[0] * n)
    n_cal = snapped_floor(fr[1] * n)
    n_test = n - n_train - n_cal
    if min(n_train, n_cal, n_test) < 1:
        raise ValueError(
            f"dataset with {n} rows cannot populate fractions {fr}; "
            f"part sizes would be {(n_train, n_cal, n_test)}"
        )
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = perm[:n_train]
    cal_idx = perm[n_train:n_train + n_cal]
    test_idx = perm[n_train + n_cal:]

    parts = [data.X[idx] for idx in (train_idx, cal_idx, test_idx)]
    mean = scale = None
    if standardize:
        mean = parts[0].mean(axis=0)
        scale = parts[0].std(axis=0)
        scale = np.where(scale > 0.0, scale, 1.0)
        parts = [(p - mean) / scale for p in parts]

    train, cal, test = (
        Dataset(p, data.y[idx], data.feature_names)
        for p, idx in zip(parts, (train_idx, cal_idx, test_idx))
    )
    return DataSplit(
        train=train, cal=cal, test=test, seed=int(seed), fractions=fr,
        train_idx=train_idx, cal_idx=cal_idx, test_idx=test_idx,
        standardized=standardize, feature_mean=mean, feature_scale=scale,
    )


def load_csv(path, target_column: str) -> Dataset:
    """Load a UTF-8 comma-separated table with a header row.

    The target column is removed from the features and becomes the target
    vector. Rows with missing, unparseable, or non-finite cells are dropped;
    the count is available as ``Dataset.dropped_rows``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, no header row")
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError(f"{path}: missing target column {target_column!r}")
        t_col = header.index(target_column)
        feature_names = tuple(h for i, h in enumerate(header) if i != t_col)
        if not feature_names:
            raise DataError(f"{path}: no feature columns besides the target")

        rows: list[list[float]] = []
        targets: list[float] = []
        dropped = 0
        for record in reader:
            if not record:
                continue
            if len(record) != len(header):
                dropped += 1
                continue
            try:
                values = [float(cell) for cell in record]
            except ValueError:
                dropped += 1
                continue
            if not all(math.isfinite(v) for v in values):
                dropped += 1
                continue
            targets.append(values.pop(t_col))
            rows.append(values)

    if len(rows) < MIN_ROWS:
        raise DataError(
            f"{path}: only {len(rows)} valid rows after dropping {dropped}, "
            f"need at least {MIN_ROWS}"
        )
    return Dataset(
        np.array(rows, dtype=np.float64),
        np.array(targets, dtype=np.float64),
        feature_names,
        dropped_rows=dropped,
    )


def save_csv(data: Dataset, path, target_column: str = "y") -> None:
    """Write a dataset in the same CSV dialect that ``load_csv`` reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.feature_names) + [target_column])
        for row, target in zip(data.X, data.y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])


# Synthetic regression data on x in [0, 5] with a known trend and a noise
# scale profile, used to exercise coverage and rejection behavior where the
# ground truth is available.

def trend(x: np.ndarray) -> np.ndarray:
    return x * np.sin(x)

def noise_scale(x: np.ndarray, profile: str) -> np.ndarray:
    if profile == "homoscedastic":
        return np.full_like(x, 0.3)
    if profile == "heteroscedastic-linear":
        return 0.1 + 0.3 * x
    if profile == "heteroscedastic-step":
        return np.where(x < 2.5, 0.1, 1.0)
    raise ValueError(
        f"unknown noise profile {profile!r}; expected one of {NOISE_PROFILES}"
    )

NOISE_PROFILES = ("homoscedastic", "heteroscedastic-linear", "heteroscedastic-step")


@dataclass(frozen=True)
class SynthSpec:
    n: int
    noise_profile: str = "homoscedastic"
    seed: int = 0


def make_synthetic(n: int, noise_profile: str = "homoscedastic",
                   seed: int = 0) -> Dataset:
    """Generate ``y = x*sin(x) + scale(x) * eps`` with ``x ~ U[0, 5]``."""
    if n < MIN_ROWS:
        raise DataError(f"synthetic dataset needs n >= {MIN_ROWS}, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 5.0, size=n)
    eps = rng.standard_normal(n)
    y = trend(x) + noise_scale(x, noise_profile) * eps
    return Dataset(x.reshape(-1, 1), y, ("x",))


def generate(spec: SynthSpec) -> Dataset:
    return make_synthetic(spec.n, spec.noise_profile, spec.seed)
