"""Command line entry point: meanfield-fluct <experiment> --config <path> [...]."""
from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import EXIT_CONFIG, run_experiment


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meanfield-fluct",
                                 description="Mean-field particle experiments with correlated noise.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--out", default=None, help="output directory (overrides the config)")
    ap.add_argument("--workers", type=int, default=None, help="worker processes")
    ap.add_argument("--seed", type=_u64, default=None, help="master seed (overrides the config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"experiment": args.experiment, "seed": args.seed, "workers": args.workers, "output": args.out}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = run_experiment(cfg)
    print(f"{cfg.experiment}: exit {code}; artifacts in {cfg.output}")
    return code


if __name__ == "__main__":
    sys.exit(main())
