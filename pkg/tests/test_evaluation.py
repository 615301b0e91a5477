import csv
import math

import numpy as np
import pytest

from cselect.evaluation import (
    CURVE_SCHEMA,
    RESTRICTED_LEVELS,
    CoverageErrorCurve,
    build_curve,
    curve_auc,
    distance_to_ideal,
    mse_at_coverage,
    normalize_curves,
    read_curves_csv,
    restricted_comparison,
    summarize_curve,
    write_curves_csv,
)
from cselect.selective import default_coverage_grid, sweep_from_scores


def curve_from(coverage, nmse, rejector="a", dataset="synth", mse_scale=7.25):
    nmse = np.asarray(nmse, dtype=np.float64)
    return CoverageErrorCurve(rejector=rejector, dataset=dataset,
                              coverage=np.asarray(coverage, dtype=np.float64),
                              mse=nmse * mse_scale, nmse=nmse)


def random_curve(rng, rejector="a", start=0.05):
    interior = rng.uniform(start, 0.999, size=int(rng.integers(1, 11)))
    coverage = np.unique(np.append(interior, 1.0))
    nmse = rng.uniform(0.0, 1.0, size=len(coverage))
    return curve_from(coverage, nmse, rejector=rejector)


# ---------------------------------------------------------------------------
# MSE over accepted rows

def test_mse_zero_when_predictions_match():
    assert mse_at_coverage([2.0, 4.0], [2.0, 4.0], [0, 1]) == 0.0


def test_mse_simple_value():
    assert mse_at_coverage([0.0, 2.0], [1.0, 1.0], [0, 1]) == 1.0


def test_mse_uses_only_accepted_rows():
    assert mse_at_coverage([0.0, 2.0], [1.0, 1.0], [1]) == 1.0
    assert mse_at_coverage([0.0, 10.0], [0.0, 0.0], [0]) == 0.0


def test_mse_rejects_empty_and_out_of_range_sets():
    with pytest.raises(ValueError, match="empty"):
        mse_at_coverage([1.0], [1.0], [])
    with pytest.raises(ValueError, match="out of range"):
        mse_at_coverage([1.0, 2.0], [1.0, 2.0], [0, 2])
    with pytest.raises(ValueError, match="out of range"):
        mse_at_coverage([1.0, 2.0], [1.0, 2.0], [-1])


# ---------------------------------------------------------------------------
# Curve construction

def test_curve_validates_shape():
    with pytest.raises(ValueError, match="ascending"):
        CoverageErrorCurve("a", "d", np.array([0.5, 0.5, 1.0]), np.zeros(3))
    with pytest.raises(ValueError, match="end at coverage 1.0"):
        CoverageErrorCurve("a", "d", np.array([0.5, 0.9]), np.zeros(2))
    with pytest.raises(ValueError, match="lengths differ"):
        CoverageErrorCurve("a", "d", np.array([0.5, 1.0]), np.zeros(3))
    with pytest.raises(ValueError, match="at least one point"):
        CoverageErrorCurve("a", "d", np.array([]), np.array([]))


def test_build_curve_hand_example():
    scores = [3.0, 1.0, 2.0, 4.0]
    targets = np.zeros(4)
    predictions = np.array([1.0, 2.0, 3.0, 4.0])
    sweep = sweep_from_scores(scores, (0.25, 0.5, 0.75, 1.0))
    curve = build_curve(sweep, targets, predictions, "csr", "toy")
    np.testing.assert_array_equal(curve.coverage, [0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(curve.mse, [4.0, 6.5, 14.0 / 3.0, 7.5])
    assert curve.rejector == "csr" and curve.dataset == "toy"


def test_build_curve_collapses_repeated_counts():
    sweep = sweep_from_scores([5.0, 1.0, 3.0], (0.25, 0.5, 0.75, 1.0))
    assert sweep.counts == (1, 2, 3, 3)
    curve = build_curve(sweep, np.zeros(3), np.ones(3), "csr", "toy")
    np.testing.assert_allclose(curve.coverage, [1 / 3, 2 / 3, 1.0])


def test_build_curve_skips_empty_acceptance():
    sweep = sweep_from_scores([1.0, 2.0], (0.0, 0.5, 1.0))
    curve = build_curve(sweep, np.zeros(2), np.ones(2), "csr", "toy")
    np.testing.assert_array_equal(curve.coverage, [0.5, 1.0])


def test_build_curve_requires_full_coverage_target():
    sweep = sweep_from_scores([1.0, 2.0], (0.5,))
    with pytest.raises(ValueError, match="full coverage"):
        build_curve(sweep, np.zeros(2), np.ones(2), "csr", "toy")


# ---------------------------------------------------------------------------
# Normalization

def test_normalize_single_curve():
    raw = CoverageErrorCurve("a", "d", np.array([0.5, 0.75, 1.0]),
                             np.array([2.0, 4.0, 8.0]))
    (out,), normalizer = normalize_curves([raw])
    assert normalizer == 8.0
    np.testing.assert_array_equal(out.nmse, [0.25, 0.5, 1.0])
    assert raw.nmse is None   # input untouched


def test_normalizer_is_shared_across_curves():
    a = CoverageErrorCurve("a", "d", np.array([0.5, 1.0]), np.array([1.0, 4.0]))
    b = CoverageErrorCurve("b", "d", np.array([0.5, 1.0]), np.array([8.0, 2.0]))
    curves, normalizer = normalize_curves([a, b])
    assert normalizer == 8.0
    np.testing.assert_array_equal(curves[0].nmse, [0.125, 0.5])
    np.testing.assert_array_equal(curves[1].nmse, [1.0, 0.25])
    assert max(c.nmse.max() for c in curves) == 1.0


def test_normalize_all_zero_errors():
    a = CoverageErrorCurve("a", "d", np.array([0.5, 1.0]), np.zeros(2))
    curves, normalizer = normalize_curves([a])
    assert normalizer == 0.0
    np.testing.assert_array_equal(curves[0].nmse, 0.0)


def test_normalize_rejects_empty_input():
    with pytest.raises(ValueError):
        normalize_curves([])


# ---------------------------------------------------------------------------
# Distance to the ideal corner

def test_distance_zero_at_ideal_corner():
    distance, best = distance_to_ideal(curve_from([1.0], [0.0]))
    assert distance == 0.0
    assert best == (1.0, 0.0)


def test_distance_single_interior_point():
    curve = curve_from([0.8, 1.0], [0.3, 1.0])
    distance, best = distance_to_ideal(curve)
    assert distance == pytest.approx(math.sqrt(0.13))
    assert distance == pytest.approx(0.36056, abs=1e-5)
    assert best == (0.8, 0.3)


def test_distance_ties_resolve_to_higher_coverage():
    # both points sit exactly 0.25 from the corner (exact in binary floats)
    curve = curve_from([0.75, 1.0], [0.0, 0.25])
    distance, best = distance_to_ideal(curve)
    assert distance == 0.25
    assert best == (1.0, 0.25)


def test_distance_matches_exhaustive_scan():
    rng = np.random.default_rng(17)
    for _ in range(50):
        curve = random_curve(rng)
        dists = np.sqrt((1.0 - curve.coverage) ** 2 + curve.nmse ** 2)
        expected = dists.min()
        pick = max(i for i in range(len(dists)) if dists[i] == expected)
        distance, best = distance_to_ideal(curve)
        assert distance == expected
        assert best == (curve.coverage[pick], curve.nmse[pick])


def test_distance_requires_normalized_curve():
    raw = CoverageErrorCurve("a", "d", np.array([1.0]), np.array([2.0]))
    with pytest.raises(ValueError, match="not normalized"):
        distance_to_ideal(raw)


# ---------------------------------------------------------------------------
# Area under the curve

def midpoint_riemann_auc(curve, total_cells=120_000):
    """Midpoint rule per linear segment; exact on piecewise-linear curves."""
    cov, nmse = curve.coverage, curve.nmse
    segments = len(cov) - 1
    cells = int(np.ceil(total_cells / segments))
    area = 0.0
    for i in range(segments):
        a, b = cov[i], cov[i + 1]
        h = (b - a) / cells
        mids = a + h * (np.arange(cells) + 0.5)
        t = (mids - a) / (b - a)
        area += np.sum(nmse[i] + t * (nmse[i + 1] - nmse[i])) * h
    return area / (cov[-1] - cov[0])


def test_auc_constant_curve():
    assert curve_auc(curve_from([0.0, 1.0], [0.5, 0.5])) == pytest.approx(0.5)


def test_auc_linear_ramp():
    assert curve_auc(curve_from([0.0, 1.0], [0.0, 1.0])) == pytest.approx(0.5)


def test_auc_normalizes_by_coverage_span():
    # constant 0.5 over [0.5, 1.0]: area 0.25 over span 0.5
    assert curve_auc(curve_from([0.5, 1.0], [0.5, 0.5])) == pytest.approx(0.5)


def test_auc_matches_midpoint_riemann_oracle():
    rng = np.random.default_rng(29)
    for _ in range(10):
        curve = random_curve(rng)
        assert curve_auc(curve) == pytest.approx(
            midpoint_riemann_auc(curve), abs=1e-9)


def test_auc_respects_pointwise_dominance():
    rng = np.random.default_rng(31)
    for _ in range(10):
        low = random_curve(rng, rejector="low")
        high = curve_from(low.coverage,
                          np.clip(low.nmse + rng.uniform(0, 0.3, low.n_points),
                                  0.0, 1.0),
                          rejector="high")
        assert curve_auc(low) <= curve_auc(high)


def test_auc_input_validation():
    with pytest.raises(ValueError, match="two curve points"):
        curve_auc(curve_from([1.0], [0.2]))
    raw = CoverageErrorCurve("a", "d", np.array([0.5, 1.0]), np.ones(2))
    with pytest.raises(ValueError, match="not normalized"):
        curve_auc(raw)


# ---------------------------------------------------------------------------
# Restricted high-coverage comparison

def test_restricted_dominating_curve_wins_everywhere():
    coverage = (0.5, 0.8, 0.85, 0.9, 0.95, 1.0)
    low = curve_from(coverage, [0.1, 0.15, 0.2, 0.25, 0.3, 0.4], rejector="csr")
    high = curve_from(coverage, [0.3, 0.35, 0.4, 0.45, 0.5, 0.6],
                      rejector="knn_variance")
    table = restricted_comparison([low, high])
    assert set(table) == set(RESTRICTED_LEVELS)
    for level in RESTRICTED_LEVELS:
        assert table[level]["winner"] == "csr"
        assert table[level]["nmse"]["csr"] < table[level]["nmse"]["knn_variance"]


def test_restricted_interpolates_between_grid_points():
    curve = curve_from([0.5, 0.8, 0.9, 1.0], [0.6, 0.2, 0.4, 0.1])
    table = restricted_comparison([curve])
    assert table[0.8]["nmse"]["a"] == pytest.approx(0.2)
    assert table[0.85]["nmse"]["a"] == pytest.approx(0.3)
    assert table[0.9]["nmse"]["a"] == pytest.approx(0.4)
    assert table[0.95]["nmse"]["a"] == pytest.approx(0.25)


def test_restricted_winner_matches_brute_force():
    rng = np.random.default_rng(37)
    for _ in range(20):
        curves = [random_curve(rng, rejector=name, start=0.4)
                  for name in ("a", "b", "c")]
        # widen every curve to cover [<=0.8, 1.0]
        curves = [curve_from(np.concatenate(([0.3], c.coverage)),
                             np.concatenate(([c.nmse[0]], c.nmse)),
                             rejector=c.rejector)
                  for c in curves]
        table = restricted_comparison(curves)
        for level, row in table.items():
            values = {c.rejector: float(np.interp(level, c.coverage, c.nmse))
                      for c in curves}
            expected = min(sorted(values), key=values.get)
            assert row["winner"] == expected
            assert row["nmse"] == values


def test_restricted_ties_break_by_name_order():
    coverage = (0.5, 1.0)
    first = curve_from(coverage, [0.2, 0.2], rejector="alpha")
    second = curve_from(coverage, [0.2, 0.2], rejector="beta")
    table = restricted_comparison([second, first])
    for row in table.values():
        assert row["winner"] == "alpha"


def test_restricted_rejects_out_of_range_levels():
    curve = curve_from([0.9, 1.0], [0.1, 0.2])
    with pytest.raises(ValueError, match="outside curve range"):
        restricted_comparison([curve])   # 0.8 below the curve start


# ---------------------------------------------------------------------------
# Scale invariance of the whole pipeline

def test_evaluation_is_invariant_to_target_scale():
    rng = np.random.default_rng(41)
    n = 200
    targets = rng.normal(size=n)
    predictions = targets + rng.normal(scale=0.5, size=n)
    grid = default_coverage_grid(0.05)
    scores = {"csr": rng.uniform(size=n), "knn_variance": rng.uniform(size=n)}

    def evaluate(scale):
        curves = [
            build_curve(sweep_from_scores(scores[name], grid),
                        targets * scale, predictions * scale, name, "toy")
            for name in ("csr", "knn_variance")
        ]
        curves, _ = normalize_curves(curves)
        table = restricted_comparison(curves)
        return curves, table

    base_curves, base_table = evaluate(1.0)
    scaled_curves, scaled_table = evaluate(3.0)
    for base, scaled in zip(base_curves, scaled_curves):
        np.testing.assert_allclose(scaled.nmse, base.nmse, atol=1e-12)
        np.testing.assert_allclose(scaled.mse, base.mse * 9.0, rtol=1e-12)
        assert curve_auc(scaled) == pytest.approx(curve_auc(base), abs=1e-12)
        assert distance_to_ideal(scaled)[1][0] == distance_to_ideal(base)[1][0]
    for level in RESTRICTED_LEVELS:
        assert scaled_table[level]["winner"] == base_table[level]["winner"]


# ---------------------------------------------------------------------------
# Summaries and CSV persistence

def test_summarize_curve_fields_agree_with_functions():
    curve = curve_from([0.5, 0.8, 0.9, 1.0], [0.6, 0.2, 0.4, 0.1],
                       rejector="csr")
    table = restricted_comparison([curve])
    summary = summarize_curve(curve, table)
    assert summary.rejector == "csr"
    assert summary.auc == curve_auc(curve)
    distance, best = distance_to_ideal(curve)
    assert summary.distance == distance
    assert (summary.best_coverage, summary.best_nmse) == best
    assert summary.restricted == {
        repr(level): table[level]["nmse"]["csr"] for level in RESTRICTED_LEVELS
    }


def test_curves_csv_round_trip(tmp_path):
    rng = np.random.default_rng(43)
    originals = [random_curve(rng, rejector="csr"),
                 random_curve(rng, rejector="knn_variance")]
    path = tmp_path / "curves.csv"
    write_curves_csv(path, originals)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["method", "dataset", "coverage", "mse", "nmse", "schema"]
    loaded = {c.rejector: c for c in read_curves_csv(path)}
    assert set(loaded) == {"csr", "knn_variance"}
    for original in originals:
        match = loaded[original.rejector]
        np.testing.assert_array_equal(match.coverage, original.coverage)
        np.testing.assert_array_equal(match.mse, original.mse)
        np.testing.assert_array_equal(match.nmse, original.nmse)


def test_read_curves_rejects_unknown_schema(tmp_path):
    path = tmp_path / "curves.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "dataset", "coverage", "mse", "nmse", "schema"])
        writer.writerow(["csr", "d", "1.0", "0.5", "1.0", "other/9"])
    with pytest.raises(ValueError, match="schema"):
        read_curves_csv(path)
    write_curves_csv(path, [curve_from([1.0], [0.5])])
    assert read_curves_csv(path)[0].rejector == "a"
