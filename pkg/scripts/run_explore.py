"""Run the exploration experiment for a range of seeds and write one output directory per seed.

    python scripts/run_explore.py --seeds 0 5 --duration 300 --out runs/explore
"""
import argparse
import json
from dataclasses import replace
from pathlib import Path

from robust_cbf.config import ExperimentConfig, load_config
from robust_cbf.harness import run_explore, write_outputs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, nargs=2, default=(0, 1), metavar=("FIRST", "STOP"))
    ap.add_argument("--robots", type=int, default=3)
    ap.add_argument("--duration", type=float, default=300.0)
    ap.add_argument("--out", default="runs/explore")
    args = ap.parse_args()
    base = load_config(args.config) if args.config else ExperimentConfig()
    base = replace(base, experiment="explore", robots=args.robots, duration=args.duration)
    for seed in range(*args.seeds):
        result = run_explore(replace(base, seed=seed).validate())
        write_outputs(result, Path(args.out) / f"seed{seed:02d}")
        rep = result.report
        print(json.dumps({"seed": seed, "violation_count": rep.violation_count, "min_h": rep.min_h,
                          "n_samples": len(result.log.samples)}))


if __name__ == "__main__":
    main()
