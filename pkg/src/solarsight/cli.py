"""Command line entry point: ``solar-sight <stage> --config PATH ...``."""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigurationError, DataError, UsageError
from .pipeline import STAGES, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="solar-sight",
        description="Soiling analysis pipeline for photovoltaic panels: "
                    "synthetic data, power-loss classification, weakly "
                    "supervised localization, soiling typing, and cleaning "
                    "recommendations.")
    parser.add_argument("stage", choices=STAGES, help="pipeline stage to run")
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="key=value config file (defaults apply otherwise)")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--set", dest="overrides", metavar="KEY=VALUE",
                        action="append", default=[],
                        help="override one config key (repeatable)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.overrides, seed=args.seed)
        return run_stage(args.stage, cfg)
    except (UsageError, ConfigurationError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
