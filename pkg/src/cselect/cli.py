"""Command-line entry point.

Subcommands:
  run      execute the full pipeline for a config (TOML file and/or flags)
  report   aggregate one or more run manifests into a comparison table
  synth    emit a synthetic regression CSV
  inspect  pretty-print a calibration JSON

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal
failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ._version import __version__
from .conformal import calibration_from_dict, score_rank
from .data import DataError, NOISE_PROFILES, make_synthetic, save_csv
from .experiment import (
    ConfigError,
    ExperimentConfig,
    load_config_file,
    merge_config,
    render_report,
    report,
    run_experiment,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract reserves 2 for data
    errors, so remap usage problems to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_seeds(text: str) -> list[int]:
    """Parse ``"0,1,2"`` or ``"0-49"`` (inclusive) or a mix of both."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        try:
            if "-" in part[1:]:
                lo, hi = (int(piece) for piece in part.rsplit("-", 1))
                if hi < lo:
                    raise ValueError
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(f"cannot parse seed spec {text!r}") from None
    return seeds


def build_parser() -> _Parser:
    parser = _Parser(prog="cselect",
                     description="Selective regression with conformalized "
                                 "quantile intervals as the reject signal.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment pipeline")
    run.add_argument("--config", help="flat TOML config file; flags override")
    run.add_argument("--data", help="path to a CSV data file")
    run.add_argument("--target", help="target column name for --data")
    run.add_argument("--synth", choices=NOISE_PROFILES,
                     help="use a synthetic data source instead of --data")
    run.add_argument("--alpha", type=float, help="miscoverage level")
    run.add_argument("--model", help="model family (linear or gbt)")
    run.add_argument("--rejectors",
                     help="comma-separated rejector kinds (csr,knn_variance)")
    run.add_argument("--k", type=int, help="neighbour count for knn_variance")
    run.add_argument("--seeds", help='seed list, e.g. "0,1,2" or "0-49"')
    run.add_argument("--grid-step", type=float,
                     help="coverage grid resolution in (0, 1]")
    run.add_argument("--out", help="output directory")
    run.set_defaults(handler=_cmd_run)

    rep = sub.add_parser("report", help="aggregate run manifests")
    rep.add_argument("manifests", nargs="+", help="manifest.json paths")
    rep.set_defaults(handler=_cmd_report)

    synth = sub.add_parser("synth", help="write a synthetic CSV")
    synth.add_argument("--profile", choices=NOISE_PROFILES,
                       default="homoscedastic")
    synth.add_argument("--n", type=int, default=3000)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="CSV path to write")
    synth.set_defaults(handler=_cmd_synth)

    inspect = sub.add_parser("inspect", help="pretty-print a calibration JSON")
    inspect.add_argument("path")
    inspect.set_defaults(handler=_cmd_inspect)
    return parser


def _cmd_run(args) -> int:
    base = load_config_file(args.config) if args.config else {}
    overrides = {
        "data": args.data,
        "target": args.target,
        "synth": args.synth,
        "alpha": args.alpha,
        "model": args.model,
        "rejectors": (args.rejectors.split(",")
                      if args.rejectors is not None else None),
        "k": args.k,
        "seeds": parse_seeds(args.seeds) if args.seeds is not None else None,
        "grid_step": args.grid_step,
        "out": args.out,
    }
    config = ExperimentConfig.from_mapping(merge_config(base, overrides))
    manifest = run_experiment(config)
    ok = len(manifest.files)
    print(f"{config.dataset_name}: {ok}/{len(config.seeds)} seeds completed; "
          f"manifest at {config.out_dir}/manifest.json")
    if manifest.errors:
        for entry in manifest.errors:
            print(f"seed {entry['seed']} failed: {entry['error']}",
                  file=sys.stderr)
        return 3
    return 0


def _cmd_report(args) -> int:
    sys.stdout.write(render_report(report(args.manifests)))
    return 0


def _cmd_synth(args) -> int:
    data = make_synthetic(n=args.n, noise_profile=args.profile,
                          seed=args.seed)
    save_csv(data, args.out)
    print(f"wrote {data.n_rows} rows to {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    try:
        with open(args.path, encoding="utf-8") as fh:
            doc = json.load(fh)
        calibration = calibration_from_dict(doc)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise DataError(f"cannot load calibration {args.path}: {exc}") from exc
    scores = calibration.scores
    q_hat = "INFINITE" if not calibration.is_finite else f"{calibration.q_hat:.6g}"
    print(f"schema:  {doc['schema']}")
    print(f"alpha:   {calibration.alpha}")
    print(f"n_cal:   {calibration.n_cal}")
    print(f"rank:    {score_rank(calibration.n_cal, calibration.alpha)} "
          f"of {calibration.n_cal}")
    print(f"q_hat:   {q_hat}")
    print(f"scores:  min {scores.min():.6g}  "
          f"median {float(np.median(scores)):.6g}  max {scores.max():.6g}")
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"cselect: config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"cselect: data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort CLI boundary
        print(f"cselect: internal error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
