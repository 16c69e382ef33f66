"""Command-line entry point: ``cityrec <command> --config FILE [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .crossdomain import Strategy
from .errors import CityRecError, ConfigError
from .experiment import (
    load_config,
    render_tables,
    report_overlap,
    run_gridsearch,
    run_pipeline,
    run_preprocess,
    run_split,
)

COMMANDS = {
    "preprocess": "parse, deduplicate and k-core filter the raw check-ins",
    "split": "preprocess and split into train/test windows",
    "gridsearch": "tune each recommender on the single-domain scope (P@cutoff)",
    "run": "full pipeline: scopes, models, evaluation, tables",
    "tables": "re-render tables from <out>/metrics.csv",
    "overlap": "common-user overlap per strategy and target city",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cityrec", description="City-as-domain venue recommendation experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name, help_ in COMMANDS.items():
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--out", type=Path, help="output directory (overrides [experiment] out)")
        if name == "tables":
            s.add_argument("--config", type=Path, help="unused; accepted for symmetry")
            continue
        s.add_argument("--config", type=Path, required=True, help="experiment configuration file")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--jobs", type=int, help="parallel workers")
        s.add_argument("--cities", help="comma-separated target cities")
        s.add_argument("--strategy", action="append",
                       help="single, ncd:N or pcd:N; repeat or comma-separate for several")
    return p


def _strategies(values):
    if not values:
        return None
    return [Strategy.parse(s) for v in values for s in v.split(",") if s.strip()]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "tables":
            if args.out is None:
                raise ConfigError("tables needs --out pointing at a run directory")
            for path in render_tables(args.out / "metrics.csv", args.out):
                print(path)
            return 0
        cfg = load_config(args.config).with_overrides(
            seed=args.seed,
            jobs=args.jobs,
            out=args.out,
            cities=[c.strip() for c in args.cities.split(",") if c.strip()] if args.cities else None,
            strategies=_strategies(args.strategy),
        )
        runner = {
            "preprocess": run_preprocess,
            "split": run_split,
            "gridsearch": run_gridsearch,
            "run": run_pipeline,
            "overlap": report_overlap,
        }[args.command]
        out = runner(cfg)
        print(out)
        return 0
    except CityRecError as e:
        print(f"cityrec: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"cityrec: error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
