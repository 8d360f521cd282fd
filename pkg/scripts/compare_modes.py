"""Matched robust and nominal swap runs on the same seeds; prints a per-seed table and a summary.

    python scripts/compare_modes.py --config configs/adversarial_swap.cfg --seeds 0 20
"""
import argparse
from dataclasses import replace

import numpy as np

from robust_cbf.config import ExperimentConfig, load_config
from robust_cbf.harness import run_swap


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/adversarial_swap.cfg")
    ap.add_argument("--seeds", type=int, nargs=2, default=(0, 20), metavar=("FIRST", "STOP"))
    args = ap.parse_args()
    base = load_config(args.config) if args.config else ExperimentConfig()
    rows = []
    print("seed  nom_vt  rob_vt  nom_dev  rob_dev  nom_man  rob_man")
    for seed in range(*args.seeds):
        nom = run_swap(replace(base, seed=seed, mode="nominal").validate()).report
        rob = run_swap(replace(base, seed=seed, mode="robust").validate()).report
        rows.append((nom.violation_time, rob.violation_time, nom.mean_dev, rob.mean_dev))
        print(f"{seed:4d}  {nom.violation_time:6.2f}  {rob.violation_time:6.2f}  {nom.mean_dev:7.3f}  "
              f"{rob.mean_dev:7.3f}  {nom.maneuvers_completed:7d}  {rob.maneuvers_completed:7d}")
    r = np.array(rows)
    sep = int(((r[:, 0] > 0) & (r[:, 1] == 0)).sum())
    print(f"separated on {sep}/{len(r)} seeds; mean_dev nominal {r[:, 2].mean():.3f}, robust {r[:, 3].mean():.3f}")


if __name__ == "__main__":
    main()
