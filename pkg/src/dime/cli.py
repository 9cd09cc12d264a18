"""Command line entry point: ``dime {run,ablate,sweep,selftest}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (
    SWEEP_PARAMS,
    RunConfig,
    emit_ablation,
    emit_results,
    emit_sweep,
    parse_key_values,
    run_ablation,
    run_sensitivity,
    run_variant,
)
from .selftest import run_selftest


class CliError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value file with RunConfig fields")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seeds", help="comma separated seed list")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field; repeatable")
    common.add_argument("--jobs", type=int, default=1, help="seeds run in parallel (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dime", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one variant over all seeds")
    sub.add_parser("ablate", parents=[common], help="run the five-variant ablation ladder")
    sweep = sub.add_parser("sweep", parents=[common], help="sensitivity sweep over one parameter")
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sweep.add_argument("--values", required=True, help="comma separated values")
    sub.add_parser("selftest", help="run the analytic invariant checks")
    return parser


def load_config(args) -> RunConfig:
    pairs: dict[str, str] = {}
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc.strerror}") from exc
        pairs.update(parse_key_values(text.splitlines()))
    for item in args.overrides:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    if args.seeds is not None:
        pairs["seed_list"] = args.seeds
    if args.out is not None:
        pairs["output_dir"] = args.out
    return RunConfig.from_pairs(pairs)


def parse_values(raw: str) -> list[float]:
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"--values: {exc}") from exc
    if not values:
        raise CliError("--values is empty")
    return values


def dispatch(args) -> int:
    if args.command == "selftest":
        return 0 if run_selftest() else 1
    if args.jobs < 1:
        raise CliError("--jobs must be at least 1")
    cfg = load_config(args)
    out = Path(cfg.output_dir)
    if args.command == "run":
        result = run_variant(cfg, args.jobs)
        emit_results(result, out)
        agg = result.aggregate()
        print(" ".join(f"{k}={m:.4f}±{s:.4f}" for k, (m, s) in agg.items()))
    elif args.command == "ablate":
        path = emit_ablation(run_ablation(cfg, jobs=args.jobs), out)
        print(path.read_text(), end="")
    else:
        rows = run_sensitivity(cfg, args.param, parse_values(args.values), args.jobs)
        path = emit_sweep(args.param, rows, out)
        print(path.read_text(), end="")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"dime: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
