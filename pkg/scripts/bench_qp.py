"""Per-tick constraint build + solve time for growing ensembles under oracle intervals.

    python scripts/bench_qp.py --robots 2 3 5 7 --duration 10
"""
import argparse
from dataclasses import replace

import numpy as np

from robust_cbf.config import ExperimentConfig
from robust_cbf.harness import run_swap


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--robots", type=int, nargs="+", default=[2, 3, 5, 7])
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print("N  rows  median_ms  p95_ms  mean_ms")
    for n in args.robots:
        cfg = replace(ExperimentConfig(), experiment="swap", robots=n, duration=args.duration,
                      oracle_disturbance=True, seed=args.seed).validate()
        wct = run_swap(cfg).log.wct_ms
        rows = 16 * n * (n - 1) // 2 + 4 * n
        print(f"{n}  {rows:4d}  {np.median(wct):9.3f}  {np.percentile(wct, 95):6.3f}  {wct.mean():7.3f}")


if __name__ == "__main__":
    main()
