"""Command-line interface for the sweep experiments and the validation battery.

Exit codes: 0 on success, 2 for configuration errors, 3 for numeric failures
outside the flagged paths.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, NumericError
from .harness import (
    ExperimentConfig,
    apply_fast_profile,
    run_point,
    sweep_depth,
    sweep_gamma,
    sweep_nn,
    sweep_width,
    validate,
    write_manifest,
    write_sweep_csv,
)

_SWEEPS = {
    "sweep-width": sweep_width,
    "sweep-depth": sweep_depth,
    "sweep-gamma": sweep_gamma,
    "sweep-nn": sweep_nn,
}


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--fast", action="store_true",
                        help="desk-scale profile: reps 100/100/150, widths <= 1024")
    parser.add_argument("--second-loop", action="store_true",
                        help="include the cubic training diagnostic")
    parser.add_argument("--workers", type=int, help="worker threads per MC loop")
    parser.add_argument("--target", choices=("sin2x", "poly", "abs"))
    parser.add_argument("--width", type=int, help="feature width n")
    parser.add_argument("--depth", type=int, help="network depth L")
    parser.add_argument("--gamma", type=float, help="kernel-level ridge gamma")
    parser.add_argument("--n-train", type=int, help="training set size")
    parser.add_argument("--n-test", type=int, help="test set size")
    parser.add_argument("--activation", choices=("tanh", "relu", "identity"))
    parser.add_argument("--reps-empirical", type=int)
    parser.add_argument("--reps-mean", type=int)
    parser.add_argument("--reps-contraction", type=int)


_FLAG_TO_KEY = {
    "seed": "master_seed",
    "out": "output_dir",
    "width": "width",
    "depth": "depth",
    "gamma": "gamma",
    "n_train": "n_train",
    "n_test": "n_test",
    "target": "target",
    "activation": "activation",
    "reps_empirical": "reps_empirical",
    "reps_mean": "reps_mean",
    "reps_contraction": "reps_contraction",
    "workers": "workers",
}


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = {}
    if args.config is not None:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = str(value) if key == "output_dir" else value
    if args.second_loop:
        raw["second_loop"] = True
    config = ExperimentConfig.from_dict(raw)
    if args.fast:
        config = apply_fast_profile(config)
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfloop",
        description="Loop-corrected error predictions for random-feature ridge regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*_SWEEPS, "point", "validate"):
        p = sub.add_parser(name)
        _add_common_flags(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        if args.command == "validate":
            report = validate(config)
            path = out_dir / "validate_report.json"
            with open(path, "w") as fh:
                json.dump(report, fh, indent=2)
                fh.write("\n")
            for check in report["checks"]:
                status = "pass" if check["passed"] else "FAIL"
                print(f"{status:>4}  {check['name']}: {check['detail']}")
            print(f"report written to {path}")
            return 0

        if args.command == "point":
            record = run_point(config, n=config.width, L=config.depth,
                               gamma=config.gamma, N=config.n_train)
            records = [record]
            csv_name = "point.csv"
        else:
            records = _SWEEPS[args.command](config)
            csv_name = args.command.replace("-", "_") + ".csv"

        write_sweep_csv(records, out_dir / csv_name)
        write_manifest(config, records, csv_name, out_dir / "manifest.json")
        flagged = sum(r.flagged for r in records)
        print(f"{len(records)} record(s) -> {out_dir / csv_name} ({flagged} flagged)")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
