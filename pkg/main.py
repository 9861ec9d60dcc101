# main.py
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from cli_io import EXIT_CONFIG_ERROR, EXIT_OK, ConfigError, load_config, run
from logging_setup import configure_logging
from model import AssumptionViolation
from models import EXPERIMENT_NAMES, RunConfig
from storage_sqlite import DB_DEFAULT, RunRegistry

logger = logging.getLogger(__name__)

RUNS_COMMAND = "runs"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavelab",
        description="Spectral-Galerkin simulator and verification lab for damped semilinear waves",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENT_NAMES:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--output", help="override the output directory")
        p.add_argument("--registry", default=str(DB_DEFAULT), help="SQLite run registry path")
        p.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    runs = sub.add_parser(RUNS_COMMAND, help="list recorded runs as JSON")
    runs.add_argument("--experiment", choices=EXPERIMENT_NAMES, help="only runs of this experiment")
    runs.add_argument("--registry", default=str(DB_DEFAULT), help="SQLite run registry path")
    return parser


def list_runs(registry: str, experiment: Optional[str] = None) -> int:
    records = RunRegistry(registry).list_runs(experiment)
    print(json.dumps(records, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == RUNS_COMMAND:
        configure_logging("WARNING")
        return list_runs(args.registry, args.experiment)
    configure_logging("INFO", quiet=args.quiet)

    try:
        config = load_config(args.config) if args.config else RunConfig()
    except (ConfigError, AssumptionViolation, OSError) as e:
        logger.error("invalid configuration: %s", e)
        return EXIT_CONFIG_ERROR

    if config.experiment.name != args.command:
        if args.config:
            logger.info("experiment %r from the command line replaces %r from the config",
                        args.command, config.experiment.name)
        config = RunConfig.model_validate({
            **config.model_dump(),
            "experiment": {**config.experiment.model_dump(), "name": args.command},
        })
    return run(config, registry_path=args.registry, output_dir=args.output, seed=args.seed)


if __name__ == "__main__":
    sys.exit(main())
