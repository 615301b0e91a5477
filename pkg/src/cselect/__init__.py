"""Selective regression with conformalized quantile intervals.

Quantile-pair models are calibrated by split conformal prediction; the
width of the calibrated interval becomes the abstention signal. Rejectors
are compared on coverage-error curves via AUC and distance to the ideal
point (coverage 1, error 0).
"""

from ._version import __version__
from .conformal import (
    CalibrationResult,
    Intervals,
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
from .data import (
    NOISE_PROFILES,
    DataError,
    Dataset,
    DataSplit,
    SynthSpec,
    generate,
    load_csv,
    make_synthetic,
    save_csv,
    split_dataset,
)
from .evaluation import (
    CoverageErrorCurve,
    EvalSummary,
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
from .experiment import (
    ConfigError,
    ExperimentConfig,
    RunManifest,
    load_config_file,
    merge_config,
    read_manifest,
    render_report,
    report,
    run_experiment,
)
from .models import (
    FAMILIES,
    GradientBoosted,
    KnnMeanVariance,
    LinearLeastSquares,
    LinearQuantile,
    QuantilePairRegressor,
    fit_point_model,
    fit_quantile_pair,
    model_from_dict,
    model_to_dict,
    pinball_loss,
)
from .selective import (
    REJECTOR_KINDS,
    ConformalSelectiveRegressor,
    ConformalWidthRejector,
    KnnVarianceRejector,
    SelectiveOutput,
    ThresholdSweep,
    decide,
    default_coverage_grid,
    sweep_from_scores,
    sweep_thresholds,
)

__all__ = [
    "__version__",
    # data
    "DataError", "Dataset", "DataSplit", "SynthSpec", "NOISE_PROFILES",
    "generate", "load_csv", "make_synthetic", "save_csv", "split_dataset",
    # models
    "FAMILIES", "GradientBoosted", "KnnMeanVariance", "LinearLeastSquares",
    "LinearQuantile", "QuantilePairRegressor", "fit_point_model",
    "fit_quantile_pair", "model_from_dict", "model_to_dict", "pinball_loss",
    # conformal
    "CalibrationResult", "Intervals", "calibrate", "calibration_from_dict",
    "calibration_to_dict", "conformal_interval", "conformity_scores",
    "empirical_coverage", "repair_crossed_bounds", "score_rank",
    "threshold_from_scores",
    # selective
    "REJECTOR_KINDS", "ConformalSelectiveRegressor", "ConformalWidthRejector",
    "KnnVarianceRejector", "SelectiveOutput", "ThresholdSweep", "decide",
    "default_coverage_grid", "sweep_from_scores", "sweep_thresholds",
    # evaluation
    "CoverageErrorCurve", "EvalSummary", "build_curve", "curve_auc",
    "distance_to_ideal", "mse_at_coverage", "normalize_curves",
    "read_curves_csv", "restricted_comparison", "summarize_curve",
    "write_curves_csv",
    # experiment
    "ConfigError", "ExperimentConfig", "RunManifest", "load_config_file",
    "merge_config", "read_manifest", "render_report", "report",
    "run_experiment",
]
