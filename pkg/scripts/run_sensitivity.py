#!/usr/bin/env python3
"""Sensitivity sweeps for the gating thresholds and the step-imbalance ratio.

By default sweeps gamma_head, gamma_tail and head_ratio over a small grid and
rho over {1, 0.1, 0.01, 0.001}; pass --param to run a single sweep.
"""
import argparse
import logging

from dime.harness import SWEEP_PARAMS, RunConfig, emit_sweep, parse_seed_list, run_sensitivity

GRIDS = {
    "gamma_head": [0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
    "gamma_tail": [0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0],
    "head_ratio": [0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
    "rho": [1.0, 0.1, 0.01, 0.001],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--param", choices=SWEEP_PARAMS, action="append")
    ap.add_argument("--out", default="runs/sensitivity")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = RunConfig(seed_list=parse_seed_list(args.seeds))
    for param in args.param or SWEEP_PARAMS:
        rows = run_sensitivity(cfg, param, GRIDS[param], jobs=args.jobs)
        print(emit_sweep(param, rows, args.out).read_text())


if __name__ == "__main__":
    main()
