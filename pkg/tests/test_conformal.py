import json
import math
from fractions import Fraction

import numpy as np
import pytest

from cselect.conformal import (
    CalibrationResult,
    calibrate,
    calibration_from_dict,
    calibration_to_dict,
    conformal_interval,
    conformity_scores,
    empirical_coverage,
    repair_crossed_bounds,
    score_rank,
    threshold_from_scores,
)
from cselect.data import make_synthetic, split_dataset
from cselect.models import QuantilePairRegressor, fit_quantile_pair


class Flat:
    """Fitted stand-in predictor returning one constant."""

    def __init__(self, value, n_features=1):
        self.value = float(value)
        self.n_features_in_ = n_features

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value)


def flat_pair(lower, upper, alpha=0.1):
    return QuantilePairRegressor.from_fitted(Flat(lower), Flat(upper), alpha)


def oracle_threshold(scores, alpha):
    """Sorted-index oracle with the rank computed in exact arithmetic."""
    rank = math.ceil(Fraction(len(scores) + 1) * (1 - Fraction(str(alpha))))
    if rank > len(scores):
        return math.inf
    return float(sorted(scores)[rank - 1])


# ---------------------------------------------------------------------------
# Scores and crossing repair

def test_conformity_score_examples():
    scores = conformity_scores(np.array([5.0, 7.0, 3.0]),
                               np.array([3.0, 3.0, 3.0]),
                               np.array([6.0, 6.0, 6.0]))
    np.testing.assert_array_equal(scores, [-1.0, 1.0, 0.0])


def test_conformity_score_sign_tracks_band_membership():
    rng = np.random.default_rng(3)
    y = rng.normal(size=200)
    lower, upper = -0.5, 0.8
    scores = conformity_scores(y, np.full(200, lower), np.full(200, upper))
    inside = (lower < y) & (y < upper)
    np.testing.assert_array_equal(scores < 0, inside)


def test_repair_crossed_bounds_collapses_to_midpoint():
    lower, upper = repair_crossed_bounds(np.array([1.0, 5.0]), np.array([3.0, 2.0]))
    np.testing.assert_array_equal(lower, [1.0, 3.5])
    np.testing.assert_array_equal(upper, [3.0, 3.5])


def test_repair_leaves_ordered_bounds_untouched():
    lo = np.array([0.0, 1.0])
    hi = np.array([0.0, 4.0])
    out_lo, out_hi = repair_crossed_bounds(lo, hi)
    np.testing.assert_array_equal(out_lo, lo)
    np.testing.assert_array_equal(out_hi, hi)


# ---------------------------------------------------------------------------
# Threshold / rank

def test_threshold_nine_scores_alpha_point_one():
    scores = np.arange(1.0, 10.0)   # 1..9
    assert score_rank(9, 0.1) == 9
    assert threshold_from_scores(scores, 0.1) == 9.0


def test_threshold_nine_scores_alpha_point_05_is_infinite():
    scores = np.arange(1.0, 10.0)
    assert score_rank(9, 0.05) == 10
    assert threshold_from_scores(scores, 0.05) == math.inf


def test_threshold_single_score_small_alpha_is_infinite():
    # one score: rank ceil(2 * (1 - alpha)) is 2 (out of reach) below 0.5
    for alpha in (0.49, 0.3, 0.05):
        assert threshold_from_scores(np.array([4.2]), alpha) == math.inf
    # ... and exactly 1 from alpha = 0.5 upward
    assert threshold_from_scores(np.array([4.2]), 0.5) == 4.2
    assert threshold_from_scores(np.array([4.2]), 0.6) == 4.2


def test_threshold_matches_sorted_index_oracle():
    rng = np.random.default_rng(11)
    for n in (1, 2, 3, 5, 8, 13, 20):
        for alpha in (0.01, 0.05, 0.1, 0.2, 0.5):
            scores = rng.uniform(-3, 3, size=n)
            assert threshold_from_scores(scores, alpha) == oracle_threshold(scores, alpha)


def test_threshold_is_monotone_in_alpha():
    rng = np.random.default_rng(13)
    scores = rng.normal(size=40)
    alphas = (0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.9)
    values = [threshold_from_scores(scores, a) for a in alphas]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_threshold_rejects_empty_scores_and_bad_alpha():
    with pytest.raises(ValueError):
        threshold_from_scores(np.array([]), 0.1)
    with pytest.raises(ValueError):
        threshold_from_scores(np.array([1.0]), 0.0)


# ---------------------------------------------------------------------------
# calibrate()

def test_calibrate_scores_flat_band():
    """Band [-1, 1]: the conformity score is max(y - 1, -1 - y)."""
    y = np.array([-2.0, -0.5, 0.0, 0.25, 3.0, 1.0])
    X = np.zeros((6, 1))
    result = calibrate(flat_pair(-1.0, 1.0), X, y, alpha=0.5)
    np.testing.assert_array_equal(result.scores, [1.0, -0.5, -1.0, -0.75, 2.0, 0.0])
    assert result.q_hat == oracle_threshold(result.scores, 0.5)
    assert result.n_cal == 6


def test_calibrate_single_row_is_infinite():
    result = calibrate(flat_pair(0.0, 1.0), np.zeros((1, 1)), np.array([5.0]), 0.1)
    assert not result.is_finite
    assert result.q_hat == math.inf


def test_calibrate_repairs_crossed_bounds_before_scoring():
    # crossed band (2, 0) collapses to the point band {1}; score = |y - 1|
    y = np.array([0.0, 4.0])
    result = calibrate(flat_pair(2.0, 0.0), np.zeros((2, 1)), y, alpha=0.5)
    np.testing.assert_array_equal(result.scores, [1.0, 3.0])


def test_calibrate_rejects_empty_and_bad_alpha():
    pair = flat_pair(0.0, 1.0)
    with pytest.raises(ValueError):
        calibrate(pair, np.zeros((0, 1)), np.array([]), 0.1)
    with pytest.raises(ValueError):
        calibrate(pair, np.zeros((2, 1)), np.array([1.0, 2.0]), 1.0)


# ---------------------------------------------------------------------------
# Conformal intervals

def test_interval_shifts_both_bounds_by_q_hat():
    calib = CalibrationResult(alpha=0.1, scores=np.array([0.5]), q_hat=0.5)
    band = conformal_interval(flat_pair(3.0, 6.0), calib, np.zeros((1, 1)))
    assert (band.lower[0], band.upper[0]) == (2.5, 6.5)
    assert band.width[0] == 4.0
    assert not band.unbounded


def test_interval_with_zero_q_hat_equals_raw_band():
    calib = CalibrationResult(alpha=0.1, scores=np.array([0.0]), q_hat=0.0)
    band = conformal_interval(flat_pair(3.0, 6.0), calib, np.zeros((4, 1)))
    np.testing.assert_array_equal(band.lower, 3.0)
    np.testing.assert_array_equal(band.upper, 6.0)


def test_interval_with_infinite_q_hat_is_unbounded():
    calib = CalibrationResult(alpha=0.05, scores=np.array([1.0]), q_hat=math.inf)
    band = conformal_interval(flat_pair(3.0, 6.0), calib, np.zeros((3, 1)))
    assert band.unbounded
    assert np.all(np.isinf(band.width))
    assert np.all(band.lower == -math.inf) and np.all(band.upper == math.inf)


def test_interval_width_gain_is_twice_q_hat():
    data = make_synthetic(400, "heteroscedastic-linear", seed=19)
    split = split_dataset(data, seed=19)
    pair = fit_quantile_pair(split.train.X, split.train.y, 0.1, family="linear")
    calib = calibrate(pair, split.cal.X, split.cal.y, 0.1)
    raw_lo, raw_hi = repair_crossed_bounds(*pair.predict_bounds(split.test.X))
    band = conformal_interval(pair, calib, split.test.X)
    np.testing.assert_allclose(band.width - (raw_hi - raw_lo),
                               2.0 * calib.q_hat, atol=1e-12)


# ---------------------------------------------------------------------------
# Coverage

def test_coverage_with_unbounded_intervals_is_one():
    calib = CalibrationResult(alpha=0.05, scores=np.array([1.0]), q_hat=math.inf)
    cov = empirical_coverage(flat_pair(0.0, 1.0), calib,
                             np.zeros((10, 1)), np.linspace(-100, 100, 10))
    assert cov == 1.0


def test_in_sample_coverage_meets_the_rank_bound():
    """Calibrating and evaluating on the same 100 rows: the q_hat order
    statistic admits at least rank/n of the scores by construction."""
    data = make_synthetic(100, "heteroscedastic-step", seed=23)
    pair = fit_quantile_pair(data.X, data.y, 0.1, family="linear")
    calib = calibrate(pair, data.X, data.y, 0.1)
    cov = empirical_coverage(pair, calib, data.X, data.y)
    assert cov >= 0.90


def test_monte_carlo_coverage_homoscedastic():
    """Fixed trained pair, 50 fresh calibration/test draws: mean coverage
    should land in [0.88, 0.93] for alpha = 0.1 (guarantee plus slack)."""
    train = make_synthetic(2000, "homoscedastic", seed=1000)
    pair = fit_quantile_pair(train.X, train.y, 0.1, family="linear")
    coverages = []
    for seed in range(50):
        cal = make_synthetic(500, "homoscedastic", seed=2000 + seed)
        test = make_synthetic(10000, "homoscedastic", seed=3000 + seed)
        calib = calibrate(pair, cal.X, cal.y, 0.1)
        coverages.append(empirical_coverage(pair, calib, test.X, test.y))
    assert 0.88 <= np.mean(coverages) <= 0.93


# ---------------------------------------------------------------------------
# Serialization

def test_calibration_json_round_trip():
    calib = CalibrationResult(alpha=0.2, scores=np.array([0.3, -0.1, 2.0]),
                              q_hat=2.0)
    doc = json.loads(json.dumps(calibration_to_dict(calib)))
    back = calibration_from_dict(doc)
    assert back.alpha == calib.alpha
    assert back.q_hat == calib.q_hat
    np.testing.assert_array_equal(back.scores, calib.scores)


def test_calibration_infinite_q_hat_uses_sentinel():
    calib = CalibrationResult(alpha=0.01, scores=np.array([1.0]), q_hat=math.inf)
    doc = calibration_to_dict(calib)
    assert doc["q_hat"] == "INFINITE"
    assert calibration_from_dict(doc).q_hat == math.inf


def test_calibration_from_dict_validates_document():
    calib = CalibrationResult(alpha=0.2, scores=np.array([1.0, 2.0]), q_hat=2.0)
    with pytest.raises(ValueError, match="schema"):
        calibration_from_dict({"schema": "other/1"})
    without_scores = calibration_to_dict(calib, include_scores=False)
    with pytest.raises(ValueError, match="scores"):
        calibration_from_dict(without_scores)
    broken = calibration_to_dict(calib)
    broken["n_cal"] = 5
    with pytest.raises(ValueError, match="n_cal"):
        calibration_from_dict(broken)
