"""``eboc <experiment> --config <path> [--seed S] [--workers W] [--out DIR]``."""

from __future__ import annotations

import argparse
import sys

from .bayes import ContractError, DomainError
from .config import KINDS, ConfigError, load_config
from .experiments import RUNNERS, write_tables
from .model import InfeasibleControlError, ParameterError
from .sddp import NumericalContractError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eboc", description="Run an episodic Bayesian control experiment.")
    p.add_argument("experiment", choices=KINDS)
    p.add_argument("--config", required=True, help="TOML or JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the base seed")
    p.add_argument("--workers", type=int, default=1, help="parallel replication workers")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.experiment)
        if args.seed is not None:
            cfg.seeds.base = args.seed
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
    except (ConfigError, ParameterError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = RUNNERS[cfg.kind](cfg, workers=args.workers)
    except (ConfigError, ParameterError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalContractError, ContractError, DomainError, InfeasibleControlError, FloatingPointError) as e:
        print(f"numerical contract violation: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    paths = write_tables(result.tables(), args.out or cfg.out_dir, cfg.kind, cfg.label)
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
