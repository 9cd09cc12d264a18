#!/usr/bin/env python3
"""Run the five-variant ablation ladder on the default synthetic stream.

Writes per-variant result folders plus ablation.csv under --out and prints
the comparison table together with the two directional checks.
"""
import argparse
import logging
import time

from dime.harness import VARIANTS, RunConfig, emit_ablation, parse_seed_list, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--epochs", type=int, default=None, help="override training epochs")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = RunConfig(seed_list=parse_seed_list(args.seeds))
    if args.epochs is not None:
        cfg = cfg.with_updates(epochs=args.epochs)
    start = time.perf_counter()
    results = run_ablation(cfg, jobs=args.jobs)
    path = emit_ablation(results, args.out)
    print(path.read_text(), end="")

    means = {v: results[v].aggregate()["A_T"][0] for v in VARIANTS}
    print(f"full > base:   {means['full'] > means['base']}  ({means['full']:.4f} vs {means['base']:.4f})")
    print(f"sm_ccw >= sm:  {means['sm_ccw'] >= means['sm']}  ({means['sm_ccw']:.4f} vs {means['sm']:.4f})")
    print(f"elapsed {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
