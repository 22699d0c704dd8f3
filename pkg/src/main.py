"""Command-line entry point for the Rosenzweig-Porter characteristics laboratory.

Subcommands:
    sample    draw one realization and write potential.csv / spectrum.csv
    run       run an experiment and write its tables and manifest
    report    aggregate finished runs into summary tables and SVG figures
    validate  list every violated constraint and every advisory of a config

Typical usage:
    python3 main.py run --config configs/localization.cfg --threads 4 --out runs/loc

Exit codes: 0 success, 1 validation or usage error, 2 every realization
failed numerically, 3 I/O error.
"""

import argparse
import os
import sys
import time
from typing import List, Optional

from rplab import config
from rplab.exceptions import ConfigurationError, NumericalFailure, ReportError
from rplab.harness import ExperimentRunner, sample
from rplab.logger import LoggerDirectoryError, get_logger, setup_logging
from rplab.reporting import report

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rplab", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("sample", "draw one realization"),
        ("run", "run an experiment"),
        ("validate", "check a config file"),
    ):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="flat KEY=VALUE experiment file")
        sub.add_argument("--threads", type=int, default=None, help="worker processes for realizations")
        sub.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        sub.add_argument("--seed", type=int, default=None, help="unsigned 64-bit master seed override")
    rep = commands.add_parser("report", help="aggregate finished runs")
    rep.add_argument("run_dirs", nargs="*", help="run directories holding a manifest.json")
    rep.add_argument("--out", required=True, help="directory for summary tables and figures")
    return parser


def _load(args: argparse.Namespace) -> config.ExperimentConfig:
    loaded = config.load_experiment_config(args.config)
    return loaded.with_overrides(
        threads=args.threads,
        output_dir=os.path.abspath(args.out) if args.out else None,
        master_seed=args.seed,
    )


def _validate(args: argparse.Namespace) -> int:
    try:
        cfg = _load(args)
    except ConfigurationError as e:
        for violation in e.violations:
            print(f"error: {violation}")
        return EXIT_VALIDATION
    problems = cfg.validate()
    for violation in problems:
        print(f"error: {violation}")
    for note in cfg.advisories():
        print(f"warning: {note}")
    if not problems:
        print(f"ok: {cfg.experiment} config {args.config} (hash {cfg.config_hash()[:12]})")
    return EXIT_VALIDATION if problems else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Parses arguments, sets up logging and dispatches the subcommand."""
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            return _validate(args)
        except FileNotFoundError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_IO

    log_root = os.path.abspath(args.out) if args.out else config.OUTPUT_ROOT
    try:
        setup_logging(level=config.LOG_LEVEL, log_file=config.LOG_FILE, output_dir=log_root)
        logger = get_logger()
    except (LoggerDirectoryError, ValueError) as e:
        print(f"CRITICAL: Logger initialization failed: {e}", file=sys.stderr)
        return EXIT_IO

    logger.info(f"--- Starting rplab {args.command} ---")
    start_time = time.time()
    try:
        if args.command == "report":
            report(args.run_dirs, os.path.abspath(args.out))
        else:
            cfg = _load(args)
            if args.command == "sample":
                sample(cfg)
            else:
                ExperimentRunner(cfg, logger=logger).run()
        return EXIT_OK
    except (ConfigurationError, ReportError) as e:
        logger.critical(f"Validation failed: {e}")
        return EXIT_VALIDATION
    except NumericalFailure as e:
        logger.critical(f"Numerical failure: {e}", exc_info=True)
        return EXIT_NUMERICAL
    except (IOError, OSError, LoggerDirectoryError) as e:
        logger.critical(f"I/O failure: {e}", exc_info=True)
        return EXIT_IO
    finally:
        execution_time = time.time() - start_time
        logger.info(f"--- rplab {args.command} finished in {execution_time:.2f} seconds ---")


if __name__ == "__main__":
    sys.exit(main())
