"""Command-line entry point: ``robust-cbf {explore,swap} [flags]``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .config import ConfigError, ExperimentConfig, load_config
from .harness import run_experiment, write_outputs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-cbf", description="Robust multi-robot safety filter experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name, help_ in (("explore", "learn the disturbance while exploring max-variance states"),
                        ("swap", "repeated antipodal swaps on a circle")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value file; flags below override it")
        p.add_argument("--robots", type=int)
        p.add_argument("--duration", type=float, help="simulated seconds")
        p.add_argument("--mode", choices=("robust", "nominal"))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--oracle-disturbance", action="store_true", default=None,
                       help="use ground-truth disturbance intervals instead of the GP")
        p.add_argument("--dataset", help="dataset CSV to fit the GP from (swap, robust mode)")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {"experiment": args.experiment}
    for key, attr in (("robots", "robots"), ("duration", "duration"), ("mode", "mode"), ("seed", "seed"),
                      ("output_dir", "out"), ("oracle_disturbance", "oracle_disturbance"), ("dataset", "dataset")):
        value = getattr(args, attr)
        if value is not None:
            overrides[key] = value
    return replace(cfg, **overrides).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        result = run_experiment(cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = result.report.to_dict()
    if cfg.output_dir:
        summary["files"] = write_outputs(result, cfg.output_dir)
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
