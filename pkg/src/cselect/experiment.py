"""End-to-end experiment runner: data -> split -> train -> calibrate ->
sweep -> curves -> artifacts.

A run is driven by an :class:`ExperimentConfig` (TOML file and/or CLI flag
overrides, flags winning). For every seed the pipeline splits the data,
trains one point model and one quantile pair on the train part, calibrates
on the calibration part, scores the test part with each configured
rejector, sweeps the coverage grid, and writes one curve CSV per rejector
plus one summary JSON — all normalized against the same per-seed maximum
MSE so the curves are directly comparable. A manifest JSON records the
resolved config and every file written. (config, seed) determines every
emitted byte; the manifest's timestamps are the sole exception.

Seeds run sequentially: the per-seed work is already vectorized, and a
serial loop keeps the artifact bytes trivially reproducible.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ._version import __version__
from .conformal import calibrate, calibration_to_dict
from .data import (
    NOISE_PROFILES,
    DataError,
    SynthSpec,
    check_fractions,
    generate,
    load_csv,
    split_dataset,
)
from .evaluation import (
    build_curve,
    normalize_curves,
    restricted_comparison,
    summarize_curve,
    write_curves_csv,
)
from .models import (
    FAMILIES,
    KnnMeanVariance,
    fit_point_model,
    fit_quantile_pair,
)
from .selective import (
    REJECTOR_KINDS,
    ConformalWidthRejector,
    KnnVarianceRejector,
    default_coverage_grid,
    sweep_from_scores,
)
from .validation import check_alpha

MANIFEST_SCHEMA = "cselect-manifest/1"

_MODEL_PARAM_KEYS = {
    "linear": ("n_epochs", "step"),
    "gbt": ("n_estimators", "max_depth", "learning_rate", "subsample",
            "min_samples_leaf", "random_state"),
}

_CONFIG_KEYS = frozenset(
    ["data", "target", "synth", "synth_n", "fractions", "alpha", "model",
     "rejectors", "k", "seeds", "grid_step", "out"]
    + [f"model_{key}" for keys in _MODEL_PARAM_KEYS.values() for key in keys]
)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved settings for one experiment (one data source, many seeds)."""

    data_path: str | None = None
    target_column: str | None = None
    synth_profile: str | None = None
    synth_n: int = 3000
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    alpha: float = 0.05
    family: str = "gbt"
    model_params: dict = field(default_factory=dict)
    rejectors: tuple[str, ...] = ("csr", "knn_variance")
    k: int = 10
    grid_step: float = 0.05
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"

    def __post_init__(self):
        if (self.data_path is None) == (self.synth_profile is None):
            raise ConfigError("exactly one of data/synth must be set")
        if self.data_path is not None and not self.target_column:
            raise ConfigError("a csv data source needs a target column")
        if self.synth_profile is not None:
            if self.synth_profile not in NOISE_PROFILES:
                raise ConfigError(
                    f"unknown synth profile {self.synth_profile!r}; "
                    f"choose from {NOISE_PROFILES}"
                )
            if self.synth_n < 10:
                raise ConfigError("synth_n must be at least 10")
        try:
            object.__setattr__(self, "fractions", check_fractions(self.fractions))
            check_alpha(self.alpha)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        allowed = set(_MODEL_PARAM_KEYS[self.family])
        unknown = set(self.model_params) - allowed
        if unknown:
            raise ConfigError(
                f"hyperparameters {sorted(unknown)} not valid for "
                f"family {self.family!r}"
            )
        rejectors = tuple(self.rejectors)
        if not rejectors:
            raise ConfigError("at least one rejector is required")
        if len(set(rejectors)) != len(rejectors):
            raise ConfigError("duplicate rejector names")
        for kind in rejectors:
            if kind not in REJECTOR_KINDS:
                raise ConfigError(
                    f"unknown rejector {kind!r}; choose from {REJECTOR_KINDS}"
                )
        object.__setattr__(self, "rejectors", rejectors)
        if self.k < 1:
            raise ConfigError("k must be a positive integer")
        if not 0.0 < self.grid_step <= 1.0:
            raise ConfigError("grid_step must be in (0, 1]")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("at least one seed is required")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("duplicate seeds")
        object.__setattr__(self, "seeds", seeds)

    @property
    def dataset_name(self) -> str:
        if self.data_path is not None:
            return Path(self.data_path).stem
        return f"synth-{self.synth_profile}"

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        """Build a config from a flat key-value mapping (TOML or flags)."""
        unknown = set(mapping) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        model_params = {
            key[len("model_"):]: value
            for key, value in mapping.items()
            if key.startswith("model_")
        }
        kwargs = {}
        for src, dst in [("data", "data_path"), ("target", "target_column"),
                         ("synth", "synth_profile"), ("synth_n", "synth_n"),
                         ("fractions", "fractions"), ("alpha", "alpha"),
                         ("model", "family"), ("rejectors", "rejectors"),
                         ("k", "k"), ("grid_step", "grid_step"),
                         ("seeds", "seeds"), ("out", "out_dir")]:
            if src in mapping and mapping[src] is not None:
                kwargs[dst] = mapping[src]
        if "fractions" in kwargs:
            kwargs["fractions"] = tuple(float(f) for f in kwargs["fractions"])
        if "rejectors" in kwargs:
            kwargs["rejectors"] = tuple(kwargs["rejectors"])
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(kwargs["seeds"])
        if model_params:
            kwargs["model_params"] = model_params
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_mapping(self) -> dict:
        """Flat echo of the resolved config (inverse of ``from_mapping``)."""
        doc = {
            "synth_n": self.synth_n,
            "fractions": list(self.fractions),
            "alpha": self.alpha,
            "model": self.family,
            "rejectors": list(self.rejectors),
            "k": self.k,
            "grid_step": self.grid_step,
            "seeds": list(self.seeds),
            "out": self.out_dir,
        }
        if self.data_path is not None:
            doc["data"] = self.data_path
            doc["target"] = self.target_column
        else:
            doc["synth"] = self.synth_profile
        for key, value in self.model_params.items():
            doc[f"model_{key}"] = value
        return doc


def load_config_file(path) -> dict:
    """Read a flat TOML config file; nested tables are rejected."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    for key, value in doc.items():
        if isinstance(value, dict):
            raise ConfigError(f"config must be flat; {key!r} is a table")
    return doc


def merge_config(base: dict, overrides: dict) -> dict:
    """Later (flag) values win over the file-supplied base."""
    merged = dict(base)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


@dataclass(frozen=True)
class RunManifest:
    """Record of one run: resolved config, artifact paths, diagnostics."""

    config: dict
    dataset: str
    version: str
    created_utc: str
    finished_utc: str
    files: dict
    errors: list

    def to_dict(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "version": self.version,
            "created_utc": self.created_utc,
            "finished_utc": self.finished_utc,
            "config": self.config,
            "dataset": self.dataset,
            "files": self.files,
            "errors": self.errors,
        }


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _seed_dataset(config: ExperimentConfig, loaded, seed: int):
    if loaded is not None:
        return loaded
    return generate(SynthSpec(n=config.synth_n,
                              noise_profile=config.synth_profile, seed=seed))


def _run_seed(config: ExperimentConfig, loaded, seed: int,
              out_dir: Path) -> dict:
    """Execute one seed's pipeline and return the files it wrote."""
    data = _seed_dataset(config, loaded, seed)
    split = split_dataset(data, fractions=config.fractions, seed=seed)
    point = fit_point_model(split.train.X, split.train.y,
                            family=config.family, params=config.model_params)
    pair = fit_quantile_pair(split.train.X, split.train.y, config.alpha,
                             family=config.family, params=config.model_params)
    calibration = calibrate(pair, split.cal.X, split.cal.y, config.alpha)

    rejectors = {}
    for kind in config.rejectors:
        if kind == "csr":
            rejectors[kind] = ConformalWidthRejector(pair, calibration)
        else:
            # The baseline sees train + calibration rows: the same data
            # budget the conformal route spends across its two stages.
            knn = KnnMeanVariance(k=config.k).fit(
                np.vstack([split.train.X, split.cal.X]),
                np.concatenate([split.train.y, split.cal.y]),
            )
            rejectors[kind] = KnnVarianceRejector(knn)

    predictions = point.predict(split.test.X)
    grid = default_coverage_grid(config.grid_step)
    curves = []
    for kind in config.rejectors:
        scores = rejectors[kind].uncertainty(split.test.X)
        sweep = sweep_from_scores(scores, grid)
        curves.append(build_curve(sweep, split.test.y, predictions,
                                  rejector=kind, dataset=config.dataset_name))
    curves, normalizer = normalize_curves(curves)
    restricted = restricted_comparison(curves)
    summaries = {c.rejector: summarize_curve(c, restricted) for c in curves}

    seed_dir = out_dir / f"seed-{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    files = {"curves": {}}
    for curve in curves:
        name = f"curve_{curve.rejector}.csv"
        tmp = seed_dir / (name + ".tmp")
        write_curves_csv(tmp, [curve])
        os.replace(tmp, seed_dir / name)
        files["curves"][curve.rejector] = f"seed-{seed}/{name}"

    summary_doc = {
        "schema": "cselect-summary/1",
        "dataset": config.dataset_name,
        "seed": seed,
        "alpha": config.alpha,
        "model": config.family,
        "normalizer": normalizer,
        "q_hat": "INFINITE" if not calibration.is_finite else calibration.q_hat,
        "rejectors": {
            kind: {
                "auc": summary.auc,
                "distance": summary.distance,
                "best_coverage": summary.best_coverage,
                "best_nmse": summary.best_nmse,
                "restricted": summary.restricted,
            }
            for kind, summary in summaries.items()
        },
        "restricted_winners": {
            repr(level): row["winner"] for level, row in restricted.items()
        },
    }
    _atomic_write_text(seed_dir / "summary.json", _dump_json(summary_doc))
    files["summary"] = f"seed-{seed}/summary.json"

    _atomic_write_text(
        seed_dir / "calibration.json",
        _dump_json(calibration_to_dict(calibration)),
    )
    files["calibration"] = f"seed-{seed}/calibration.json"
    return files


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Run every seed, then write ``manifest.json`` in the output directory.

    A failing seed is recorded in the manifest's ``errors`` list and does
    not stop the remaining seeds.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = _utc_now()

    loaded = None
    if config.data_path is not None:
        loaded = load_csv(config.data_path, config.target_column)

    files: dict = {}
    errors: list = []
    for seed in config.seeds:
        try:
            files[str(seed)] = _run_seed(config, loaded, seed, out_dir)
        except Exception as exc:  # noqa: BLE001 - seed isolation by contract
            errors.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})

    manifest = RunManifest(
        config=config.to_mapping(),
        dataset=config.dataset_name,
        version=__version__,
        created_utc=created,
        finished_utc=_utc_now(),
        files=files,
        errors=errors,
    )
    _atomic_write_text(out_dir / "manifest.json", _dump_json(manifest.to_dict()))
    return manifest


def read_manifest(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise DataError(f"{path} is not a run manifest")
    return doc


def _spread(values: list) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def report(manifest_paths) -> dict:
    """Aggregate one or more runs into a per-dataset comparison table.

    For every dataset: seed-averaged AUC and distance-to-ideal per rejector
    (with sample standard deviation across seeds), the AUC winner (lower
    mean), and the restricted-coverage winner per level (lower mean nMSE,
    name order on exact ties).
    """
    if not manifest_paths:
        raise ValueError("report needs at least one manifest")
    per_dataset: dict = {}
    for manifest_path in manifest_paths:
        manifest_path = Path(manifest_path)
        doc = read_manifest(manifest_path)
        bucket = per_dataset.setdefault(
            doc["dataset"], {"auc": {}, "distance": {}, "restricted": {}}
        )
        for seed_files in doc["files"].values():
            summary_path = manifest_path.parent / seed_files["summary"]
            try:
                with open(summary_path, encoding="utf-8") as fh:
                    summary = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(
                    f"cannot read summary {summary_path}: {exc}"
                ) from exc
            for kind, row in summary["rejectors"].items():
                bucket["auc"].setdefault(kind, []).append(row["auc"])
                bucket["distance"].setdefault(kind, []).append(row["distance"])
                for level, nmse in row["restricted"].items():
                    bucket["restricted"].setdefault(level, {}).setdefault(
                        kind, []
                    ).append(nmse)

    table: dict = {}
    for dataset, bucket in sorted(per_dataset.items()):
        rows = {}
        for kind in sorted(bucket["auc"]):
            aucs, distances = bucket["auc"][kind], bucket["distance"][kind]
            rows[kind] = {
                "n_seeds": len(aucs),
                "auc_mean": float(np.mean(aucs)),
                "auc_spread": _spread(aucs),
                "distance_mean": float(np.mean(distances)),
                "distance_spread": _spread(distances),
            }
        winner = min(sorted(rows), key=lambda kind: rows[kind]["auc_mean"])
        restricted = {}
        for level in sorted(bucket["restricted"], key=float):
            means = {
                kind: float(np.mean(values))
                for kind, values in sorted(bucket["restricted"][level].items())
            }
            restricted[level] = {
                "nmse_mean": means,
                "winner": min(sorted(means), key=means.get),
            }
        table[dataset] = {
            "rejectors": rows,
            "auc_winner": winner,
            "restricted": restricted,
        }
    return table


def render_report(table: dict) -> str:
    """Plain-text rendering of :func:`report` (one block per dataset)."""
    lines = []
    for dataset, block in table.items():
        n_seeds = max(row["n_seeds"] for row in block["rejectors"].values())
        lines.append(f"dataset: {dataset}  (seeds: {n_seeds})")
        lines.append(f"  {'rejector':<14} {'AUC':>20} {'distance':>20}")
        for kind, row in block["rejectors"].items():
            flag = "  <- winner" if kind == block["auc_winner"] else ""
            lines.append(
                f"  {kind:<14} "
                f"{row['auc_mean']:>12.4f} ±{row['auc_spread']:.4f} "
                f"{row['distance_mean']:>12.4f} ±{row['distance_spread']:.4f}"
                f"{flag}"
            )
        winners = "  ".join(
            f"{level}:{row['winner']}"
            for level, row in block["restricted"].items()
        )
        lines.append(f"  restricted winners  {winners}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"
