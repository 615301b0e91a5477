"""Reject-option machinery: per-row uncertainty scores gate a fixed point
predictor, and rank-based threshold sweeps realize any target coverage.

Two uncertainty sources are provided. The conformal rejector scores a row by
the width of its calibrated prediction interval, so model bias picked up
during calibration inflates the score. The k-nearest-neighbor rejector
scores a row by the local sample variance of the targets around it, the
classical distribution-based proxy. Both gate the same point predictions,
which makes their error curves comparable: membership of the accepted set
is the only thing a rejector controls.

A row is accepted when its uncertainty is strictly below the threshold;
equality rejects.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .conformal import CalibrationResult, calibrate, conformal_interval
from .models import KnnMeanVariance, QuantilePairRegressor, fit_point_model
from .validation import as_float_matrix, check_fitted, snapped_ceil

REJECTOR_KINDS = ("csr", "knn_variance")


class ConformalWidthRejector:
    """Uncertainty = width of the calibrated prediction interval."""

    kind = "csr"

    def __init__(self, pair, calibration: CalibrationResult):
        self.pair = pair
        self.calibration = calibration

    def intervals(self, X):
        return conformal_interval(self.pair, self.calibration, X)

    def uncertainty(self, X):
        return self.intervals(X).width


class KnnVarianceRejector:
    """Uncertainty = conditional variance estimated from the k nearest rows."""

    kind = "knn_variance"

    def __init__(self, estimator: KnnMeanVariance):
        self.estimator = estimator

    def uncertainty(self, X):
        return self.estimator.mean_variance(X)[1]


@dataclass(frozen=True)
class SelectiveOutput:
    """Outcome for one row: a prediction with its interval, or a rejection."""

    accepted: bool
    value: float | None
    interval: tuple[float, float] | None
    uncertainty: float


def decide(rejector, point_model, x, threshold: float,
           use_interval_midpoint: bool = False) -> SelectiveOutput:
    """Predict when uncertainty is strictly below ``threshold``, else reject.

    The prediction is the shared point model's output; with
    ``use_interval_midpoint`` and a conformal rejector the interval midpoint
    is reported instead.
    """
    threshold = float(threshold)
    if not math.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    x = as_float_matrix(x, "x")
    if x.shape[0] != 1:
        raise ValueError("decide() handles a single row")

    uncertainty = float(rejector.uncertainty(x)[0])
    if not uncertainty < threshold:
        return SelectiveOutput(False, None, None, uncertainty)

    interval = None
    if hasattr(rejector, "intervals"):
        band = rejector.intervals(x)
        interval = (float(band.lower[0]), float(band.upper[0]))
    if use_interval_midpoint and interval is not None:
        value = 0.5 * (interval[0] + interval[1])
    else:
        value = float(point_model.predict(x)[0])
    return SelectiveOutput(True, value, interval, uncertainty)


def default_coverage_grid(step: float = 0.05) -> tuple[float, ...]:
    """Ascending coverage targets ``step, 2*step, ..., 1.0``."""
    if not 0.0 < step <= 1.0:
        raise ValueError(f"grid step must be in (0, 1], got {step}")
    levels = snapped_ceil(1.0 / step)
    if abs(levels * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} does not divide 1.0 evenly")
    return tuple(min(1.0, round(i * step, 12)) for i in range(1, levels + 1))


def _check_grid(grid) -> tuple[float, ...]:
    grid = tuple(float(c) for c in grid)
    if not grid:
        raise ValueError("coverage grid is empty")
    if any(not 0.0 <= c <= 1.0 for c in grid):
        raise ValueError(f"coverage targets must lie in [0, 1], got {grid}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("coverage grid must be strictly ascending")
    return grid


@dataclass(frozen=True, eq=False)
class ThresholdSweep:
    """Uncertainty scores of a test set with per-coverage acceptance.

    For target coverage ``c`` exactly the ``ceil(c * n)`` rows with the
    smallest scores are accepted, score ties broken toward the lower row
    index. ``thresholds`` carries an equivalent strict cut point for each
    target (boundary score plus half the gap to the next distinct score);
    when ties straddle the acceptance boundary no strict threshold can
    reproduce the set, and the rank rule is authoritative.
    """

    scores: np.ndarray
    order: np.ndarray
    grid: tuple[float, ...]
    counts: tuple[int, ...]
    thresholds: tuple[float, ...]

    @property
    def n_rows(self) -> int:
        return len(self.scores)

    @property
    def realized(self) -> tuple[float, ...]:
        return tuple(m / self.n_rows for m in self.counts)

    def _grid_index(self, c: float) -> int:
        for i, target in enumerate(self.grid):
            if abs(target - c) <= 1e-12:
                return i
        raise ValueError(f"coverage {c} is not in the sweep grid {self.grid}")

    def accepted_set(self, c: float) -> np.ndarray:
        """Row indices accepted at target coverage ``c`` (ascending)."""
        m = self.counts[self._grid_index(c)]
        return np.sort(self.order[:m])

    def threshold_for(self, c: float) -> float:
        return self.thresholds[self._grid_index(c)]


def _strict_threshold(sorted_scores: np.ndarray, m: int) -> float:
    n = len(sorted_scores)
    if m == 0:
        low = sorted_scores[0]
        return float(low - 1.0) if math.isfinite(low) else 0.0
    boundary = sorted_scores[m - 1]
    if not math.isfinite(boundary):
        return math.inf
    after = np.searchsorted(sorted_scores, boundary, side="right")
    if after < n and math.isfinite(sorted_scores[after]):
        return float(boundary + 0.5 * (sorted_scores[after] - boundary))
    return float(boundary + 1.0)


def sweep_from_scores(scores, coverage_grid) -> ThresholdSweep:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or len(scores) == 0:
        raise ValueError("scores must be a non-empty vector")
    grid = _check_grid(coverage_grid)
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    n = len(scores)
    counts = tuple(min(n, snapped_ceil(c * n)) for c in grid)
    thresholds = tuple(_strict_threshold(sorted_scores, m) for m in counts)
    return ThresholdSweep(scores=scores, order=order, grid=grid,
                          counts=counts, thresholds=thresholds)


def sweep_thresholds(rejector, X, coverage_grid) -> ThresholdSweep:
    """Score every row of ``X`` once and build the acceptance schedule."""
    X = as_float_matrix(X)
    if X.shape[0] == 0:
        raise ValueError("cannot sweep an empty test set")
    return sweep_from_scores(rejector.uncertainty(X), coverage_grid)


def write_sweep_csv(path, sweep: ThresholdSweep, rejector_kind: str) -> None:
    """Columns: rejector, target_coverage, realized_coverage, lambda."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rejector", "target_coverage", "realized_coverage", "lambda"])
        for target, realized, lam in zip(sweep.grid, sweep.realized, sweep.thresholds):
            writer.writerow([rejector_kind, repr(target), repr(realized), repr(lam)])


class ConformalSelectiveRegressor(BaseEstimator):
    """End-to-end selective regressor with a conformal abstention rule.

    ``fit`` trains the shared point model and the quantile pair on the
    training set, ``conformalize`` calibrates the interval correction on a
    held-out set, and ``predict_selective`` returns point predictions for
    rows whose calibrated interval width is strictly below the threshold,
    ``nan`` for the rest.
    """

    def __init__(self, alpha=0.05, family="linear", model_params=None):
        self.alpha = alpha
        self.family = family
        self.model_params = model_params

    def fit(self, X, y):
        self.point_ = fit_point_model(X, y, family=self.family,
                                      params=self.model_params)
        self.pair_ = QuantilePairRegressor(
            alpha=self.alpha, family=self.family, params=self.model_params
        ).fit(X, y)
        self.n_features_in_ = self.pair_.n_features_in_
        return self

    def conformalize(self, X_cal, y_cal):
        check_fitted(self, "pair_")
        self.calibration_ = calibrate(self.pair_, X_cal, y_cal, self.alpha)
        return self

    def rejector(self) -> ConformalWidthRejector:
        check_fitted(self, "calibration_")
        return ConformalWidthRejector(self.pair_, self.calibration_)

    def uncertainty(self, X):
        return self.rejector().uncertainty(X)

    def predict(self, X):
        check_fitted(self, "point_")
        return self.point_.predict(X)

    def predict_selective(self, X, threshold: float):
        """Returns ``(values, accepted, uncertainty)`` arrays; rejected rows
        carry ``nan`` values."""
        threshold = float(threshold)
        if not math.isfinite(threshold):
            raise ValueError(f"threshold must be finite, got {threshold}")
        uncertainty = self.uncertainty(X)
        accepted = uncertainty < threshold
        values = np.where(accepted, self.predict(X), np.nan)
        return values, accepted, uncertainty
