"""Coverage-error curves and the distance-based comparison framework.

Every rejector is summarized by the curve of mean squared error over its
accepted rows as coverage rises from the first grid level to 1.0. Errors are
normalized by the maximum MSE over every point of every curve being
compared, so all curves share one scale and the largest value is exactly 1.
A curve is then scored three ways: the minimum Euclidean distance from its
points to the ideal corner (coverage 1, normalized error 0), the coverage at
which that minimum is attained, and the trapezoidal area under the curve
divided by the coverage span (lower is better). A restricted table compares
rejectors at the high-coverage levels that matter operationally,
interpolating linearly when a level falls between grid points.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .selective import ThresholdSweep

CURVE_SCHEMA = "cselect-curve/1"
SUMMARY_SCHEMA = "cselect-summary/1"
RESTRICTED_LEVELS = (0.8, 0.85, 0.9, 0.95)


def mse_at_coverage(targets, predictions, accepted) -> float:
    """Mean squared error over the accepted row indices."""
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    accepted = np.asarray(accepted, dtype=np.int64)
    if accepted.size == 0:
        raise ValueError("MSE over an empty accepted set is undefined")
    if accepted.min() < 0 or accepted.max() >= len(targets):
        raise ValueError("accepted indices out of range")
    residual = targets[accepted] - predictions[accepted]
    return float(np.mean(residual ** 2))


@dataclass(frozen=True, eq=False)
class CoverageErrorCurve:
    """(coverage, mse) points for one rejector, strictly ascending in
    coverage and ending at 1.0; ``nmse`` is filled by ``normalize_curves``."""

    rejector: str
    dataset: str
    coverage: np.ndarray
    mse: np.ndarray
    nmse: np.ndarray | None = None

    def __post_init__(self):
        cov = np.asarray(self.coverage, dtype=np.float64)
        if cov.ndim != 1 or len(cov) == 0:
            raise ValueError("curve needs at least one point")
        if np.any(np.diff(cov) <= 0.0):
            raise ValueError("curve coverages must be strictly ascending")
        if abs(cov[-1] - 1.0) > 1e-12:
            raise ValueError("curve must end at coverage 1.0")
        if len(self.mse) != len(cov):
            raise ValueError("coverage and mse lengths differ")

    @property
    def n_points(self) -> int:
        return len(self.coverage)

    def _require_nmse(self):
        if self.nmse is None:
            raise ValueError("curve is not normalized; call normalize_curves")


def build_curve(sweep: ThresholdSweep, targets, predictions,
                rejector: str, dataset: str) -> CoverageErrorCurve:
    """Measure MSE along a sweep's acceptance schedule.

    Grid targets that accept zero rows are skipped (their error is
    undefined); repeated acceptance counts on small test sets collapse to a
    single point. The sweep grid must reach coverage 1.0.
    """
    coverages, errors = [], []
    last_count = -1
    for target, count in zip(sweep.grid, sweep.counts):
        if count == 0 or count == last_count:
            continue
        last_count = count
        accepted = sweep.accepted_set(target)
        coverages.append(count / sweep.n_rows)
        errors.append(mse_at_coverage(targets, predictions, accepted))
    if not coverages or abs(coverages[-1] - 1.0) > 1e-12:
        raise ValueError("sweep grid must include full coverage (1.0)")
    return CoverageErrorCurve(rejector=rejector, dataset=dataset,
                              coverage=np.array(coverages),
                              mse=np.array(errors))


def normalize_curves(curves) -> tuple[list[CoverageErrorCurve], float]:
    """Scale every curve by the maximum MSE over all points of all curves."""
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to normalize")
    normalizer = max(float(c.mse.max()) for c in curves)
    if normalizer == 0.0:
        return [replace(c, nmse=np.zeros_like(c.mse)) for c in curves], 0.0
    return [replace(c, nmse=c.mse / normalizer) for c in curves], normalizer


def distance_to_ideal(curve: CoverageErrorCurve):
    """Minimum distance from the curve to (coverage 1, error 0).

    Returns ``(distance, (coverage, nmse))``; equal distances resolve to the
    higher-coverage point. The search is over measured grid points only.
    """
    curve._require_nmse()
    best = (math.inf, None)
    for cov, err in zip(curve.coverage, curve.nmse):
        dist = math.sqrt((1.0 - cov) ** 2 + err ** 2)
        if dist <= best[0]:
            best = (dist, (float(cov), float(err)))
    return best


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return float(0.5 * np.sum((y[1:] + y[:-1]) * np.diff(x)))


def curve_auc(curve: CoverageErrorCurve) -> float:
    """Trapezoidal area under normalized error, divided by the coverage
    span, so a constant curve integrates to its constant."""
    curve._require_nmse()
    if curve.n_points < 2:
        raise ValueError("AUC needs at least two curve points")
    span = float(curve.coverage[-1] - curve.coverage[0])
    return _trapezoid(curve.nmse, curve.coverage) / span


def restricted_comparison(curves, levels=RESTRICTED_LEVELS) -> dict:
    """Normalized error per rejector at fixed high-coverage levels.

    Levels falling between grid points are linearly interpolated. Returns
    ``{level: {"nmse": {rejector: value}, "winner": rejector}}`` with the
    winner holding the lowest error (name order breaks exact ties).
    """
    curves = list(curves)
    table: dict = {}
    for level in levels:
        level = float(level)
        per_rejector = {}
        for curve in curves:
            curve._require_nmse()
            if level < curve.coverage[0] - 1e-12 or level > curve.coverage[-1] + 1e-12:
                raise ValueError(
                    f"coverage level {level} outside curve range "
                    f"[{curve.coverage[0]}, {curve.coverage[-1]}]"
                )
            per_rejector[curve.rejector] = float(
                np.interp(level, curve.coverage, curve.nmse)
            )
        winner = min(sorted(per_rejector), key=per_rejector.get)
        table[level] = {"nmse": per_rejector, "winner": winner}
    return table


@dataclass(frozen=True)
class EvalSummary:
    rejector: str
    auc: float
    distance: float
    best_coverage: float
    best_nmse: float
    restricted: dict


def summarize_curve(curve: CoverageErrorCurve, restricted_table: dict) -> EvalSummary:
    distance, best = distance_to_ideal(curve)
    return EvalSummary(
        rejector=curve.rejector,
        auc=curve_auc(curve),
        distance=distance,
        best_coverage=best[0],
        best_nmse=best[1],
        restricted={
            repr(level): row["nmse"][curve.rejector]
            for level, row in restricted_table.items()
        },
    )


def write_curves_csv(path, curves) -> None:
    """Columns: method, dataset, coverage, mse, nmse, schema."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "dataset", "coverage", "mse", "nmse", "schema"])
        for curve in curves:
            nmse = curve.nmse if curve.nmse is not None else [math.nan] * curve.n_points
            for cov, err, nerr in zip(curve.coverage, curve.mse, nmse):
                writer.writerow([
                    curve.rejector, curve.dataset,
                    repr(float(cov)), repr(float(err)), repr(float(nerr)),
                    CURVE_SCHEMA,
                ])


def read_curves_csv(path) -> list[CoverageErrorCurve]:
    rows: dict[tuple[str, str], list[tuple[float, float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for record in csv.DictReader(fh):
            if record["schema"] != CURVE_SCHEMA:
                raise ValueError(f"unsupported curve schema {record['schema']!r}")
            key = (record["method"], record["dataset"])
            rows.setdefault(key, []).append(
                (float(record["coverage"]), float(record["mse"]), float(record["nmse"]))
            )
    curves = []
    for (method, dataset), points in rows.items():
        cov, mse, nmse = (np.array(col) for col in zip(*points))
        curves.append(CoverageErrorCurve(rejector=method, dataset=dataset,
                                         coverage=cov, mse=mse, nmse=nmse))
    return curves
