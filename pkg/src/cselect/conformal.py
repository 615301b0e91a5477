"""Split-conformal calibration of quantile-pair intervals.

A held-out calibration set measures how far true targets fall outside the
raw quantile band. The correction ``q_hat`` is the score order statistic at
rank ``ceil((n + 1) * (1 - alpha))``; subtracting it from the lower bound
and adding it to the upper bound (widening the band by ``2 * q_hat`` in
total) yields intervals that contain the target with probability at least
``1 - alpha`` under exchangeability. When the rank exceeds the number of
calibration scores no finite correction delivers the guarantee, and
``q_hat`` is infinite: every interval becomes unbounded, which downstream
rejection logic treats as maximal uncertainty rather than silently clamping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import as_float_matrix, as_float_vector, check_alpha, snapped_ceil

CALIBRATION_SCHEMA = "cselect-calibration/1"


def repair_crossed_bounds(lower, upper):
    """Collapse crossed bounds (lower > upper) to their midpoint."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    crossed = lower > upper
    if not crossed.any():
        return lower.copy(), upper.copy()
    mid = 0.5 * (lower + upper)
    return np.where(crossed, mid, lower), np.where(crossed, mid, upper)


def conformity_scores(y, lower, upper):
    """Signed distance of ``y`` outside the band ``[lower, upper]``.

    ``max(y - upper, lower - y)``: positive outside the band, zero on the
    boundary, negative strictly inside. Expects ``lower <= upper``.
    """
    y = np.asarray(y, dtype=np.float64)
    return np.maximum(y - np.asarray(upper), np.asarray(lower) - y)


def score_rank(n_cal: int, alpha: float) -> int:
    """1-based order-statistic rank ``ceil((n_cal + 1) * (1 - alpha))``."""
    return snapped_ceil((n_cal + 1) * (1.0 - alpha))


def threshold_from_scores(scores, alpha: float) -> float:
    """The calibration correction for ``alpha``; ``inf`` when out of rank."""
    check_alpha(alpha)
    scores = as_float_vector(scores, "scores")
    if len(scores) == 0:
        raise ValueError("calibration requires at least one score")
    rank = score_rank(len(scores), alpha)
    if rank > len(scores):
        return math.inf
    return float(np.sort(scores, kind="stable")[rank - 1])


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Calibration scores and the threshold derived from them.

    ``scores`` stay in calibration-row order; ``q_hat`` is ``inf`` exactly
    when the required rank exceeds ``n_cal``.
    """

    alpha: float
    scores: np.ndarray
    q_hat: float

    @property
    def n_cal(self) -> int:
        return len(self.scores)

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.q_hat)


def calibrate(pair, X_cal, y_cal, alpha: float) -> CalibrationResult:
    """Score a calibration set against a fitted quantile pair."""
    alpha = check_alpha(alpha)
    X_cal = as_float_matrix(X_cal, "X_cal")
    y_cal = as_float_vector(y_cal, "y_cal")
    if len(y_cal) == 0:
        raise ValueError("calibration set is empty")
    lower, upper = repair_crossed_bounds(*pair.predict_bounds(X_cal))
    scores = conformity_scores(y_cal, lower, upper)
    return CalibrationResult(alpha=alpha, scores=scores,
                             q_hat=threshold_from_scores(scores, alpha))


@dataclass(frozen=True, eq=False)
class Intervals:
    """Per-row prediction intervals; width is ``upper - lower``."""

    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def unbounded(self) -> bool:
        return bool(np.isinf(self.lower).any() or np.isinf(self.upper).any())


def conformal_interval(pair, calibration: CalibrationResult, X) -> Intervals:
    """Calibrated intervals: repaired raw bounds pushed out by ``q_hat``."""
    X = as_float_matrix(X)
    lower, upper = repair_crossed_bounds(*pair.predict_bounds(X))
    q = calibration.q_hat
    if not math.isfinite(q):
        n = X.shape[0]
        return Intervals(np.full(n, -math.inf), np.full(n, math.inf))
    return Intervals(lower - q, upper + q)


def empirical_coverage(pair, calibration: CalibrationResult, X, y) -> float:
    """Fraction of rows whose target lands inside the calibrated interval."""
    y = as_float_vector(y)
    if len(y) == 0:
        raise ValueError("empirical coverage of an empty set is undefined")
    intervals = conformal_interval(pair, calibration, X)
    inside = (intervals.lower <= y) & (y <= intervals.upper)
    return float(inside.mean())


def calibration_to_dict(calibration: CalibrationResult,
                        include_scores: bool = True) -> dict:
    """Audit document; an infinite threshold serializes as ``"INFINITE"``
    because JSON has no literal for it."""
    doc = {
        "schema": CALIBRATION_SCHEMA,
        "alpha": calibration.alpha,
        "n_cal": calibration.n_cal,
        "q_hat": calibration.q_hat if calibration.is_finite else "INFINITE",
    }
    if include_scores:
        doc["scores"] = calibration.scores.tolist()
    return doc


def calibration_from_dict(doc) -> CalibrationResult:
    if doc.get("schema") != CALIBRATION_SCHEMA:
        raise ValueError(f"unsupported calibration schema {doc.get('schema')!r}")
    if "scores" not in doc:
        raise ValueError("calibration document was saved without scores")
    q = doc["q_hat"]
    q_hat = math.inf if q == "INFINITE" else float(q)
    scores = np.array(doc["scores"], dtype=np.float64)
    if len(scores) != int(doc["n_cal"]):
        raise ValueError(
            f"document claims n_cal={doc['n_cal']} but has {len(scores)} scores"
        )
    return CalibrationResult(alpha=float(doc["alpha"]), scores=scores, q_hat=q_hat)
