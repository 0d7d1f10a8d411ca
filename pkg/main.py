#!/usr/bin/env python3
"""mailbench: imitation-learning experiments on tabular two-player zero-sum Markov games.

Usage:
    python main.py [--settings INI] [-v] run CONFIG [--out DIR] [--seed N] [--n-seeds N]
                   [--checkpoints Q1,Q2,...] [--workers N]
    python main.py [--settings INI] [-v] plot CSV --out FILE.svg
    python main.py [--settings INI] [-v] formulas [--out FILE.csv]
    python main.py [--settings INI] [-v] audit GAME EXPERTS RHO [--out FILE.json]

Options:
    --settings    Path to an ini file with a [mailbench] section (default: config.ini if present).
    -v, --verbose Log at DEBUG level.

Subcommands:
    run       Run the experiment described by a JSON config; writes records.csv and summary.json.
    plot      Render Nash-gap curves from a records CSV to SVG.
    formulas  Cross-check the lower-bound closed forms; exit status 1 when a check fails.
    audit     Concentrability report for a game file, an expert file and a state distribution.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from analysis import concentrability
from config_loader import (Settings, load_experiment_config, load_experts_file, load_game_file, load_rho_file,
                           load_settings, write_json)
from csv_io import FORMULA_COLUMNS, write_rows
from experiments import run_experiment
from formulas import formula_suite
from logger_setup import setup_logging
from plotting import plot_records

DEFAULT_SETTINGS = "config.ini"


def _checkpoints(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"checkpoints must be comma-separated integers, got {value!r}") from None


def parse_args(argv: Optional[list] = None):
    """Parse command-line arguments.

    Returns:
        argparse.Namespace with the global options plus `command` and its own options.
    """
    parser = argparse.ArgumentParser(prog="mailbench", description="Multi-agent imitation learning experiments")
    parser.add_argument("--settings", default=None, help="Path to settings ini file")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment config")
    run.add_argument("config", help="Path to experiment JSON config")
    run.add_argument("--out", dest="output_dir", default=None, help="Output directory")
    run.add_argument("--seed", type=int, default=None, help="Master seed")
    run.add_argument("--n-seeds", type=int, default=None, help="Number of seeds per algorithm")
    run.add_argument("--checkpoints", type=_checkpoints, default=None, help="Comma-separated query budgets")
    run.add_argument("--workers", type=int, default=None, help="Worker processes")

    plot = sub.add_parser("plot", help="Plot a records CSV")
    plot.add_argument("csv", help="Records CSV")
    plot.add_argument("--out", required=True, help="Output SVG path")

    formulas = sub.add_parser("formulas", help="Run the closed-form checks")
    formulas.add_argument("--out", default=None, help="Also write the checks to this CSV")
    formulas.add_argument("--flip-delta-sign", action="store_true", help=argparse.SUPPRESS)

    audit = sub.add_parser("audit", help="Concentrability report")
    audit.add_argument("game", help="Game JSON file")
    audit.add_argument("experts", help="Expert policies JSON file")
    audit.add_argument("rho", help="State distribution JSON file")
    audit.add_argument("--out", default=None, help="Write the report to this JSON file")
    return parser.parse_args(argv)


def _settings(path: Optional[str]) -> Settings:
    if path is not None:
        return load_settings(path)
    if os.path.exists(DEFAULT_SETTINGS):
        return load_settings(DEFAULT_SETTINGS)
    return Settings()


def _run(args, settings: Settings, logger: logging.Logger) -> bool:
    overrides = {"seed": args.seed, "output_dir": args.output_dir, "n_seeds": args.n_seeds,
                 "checkpoints": args.checkpoints, "workers": args.workers}
    cfg = load_experiment_config(args.config, overrides, defaults={"output_dir": settings.output_dir})
    logger.info("Running %s; seed=%s, n_seeds=%s, output=%s", cfg.experiment, cfg.seed, cfg.n_seeds, cfg.output_dir)
    outcome = run_experiment(cfg, workers=settings.workers)
    for label, path in sorted(outcome.paths.items()):
        print(f"{label}: {path}")
    return outcome.passed


def _formulas(args, logger: logging.Logger) -> bool:
    checks = formula_suite(flip_delta_sign=args.flip_delta_sign)
    width = max(len(c.check) for c in checks)
    for c in checks:
        print(f"{c.check:<{width}}  {'PASS' if c.passed else 'FAIL'}  {c.detail}")
    passed = sum(c.passed for c in checks)
    print(f"{passed}/{len(checks)} checks passed")
    if args.out:
        write_rows(args.out, FORMULA_COLUMNS, (c.to_row() for c in checks))
        logger.info("Wrote formula checks to %s", args.out)
    return passed == len(checks)


def _audit(args, logger: logging.Logger) -> bool:
    game = load_game_file(args.game)
    experts = load_experts_file(args.experts, game)
    rho = load_rho_file(args.rho)
    report = concentrability(game, experts, rho).to_dict()
    if args.out:
        write_json(args.out, report)
        logger.info("Wrote concentrability report to %s", args.out)
    print(json.dumps({"c_expert": report["c_expert"], "c_deviation": report["c_deviation"]}, sort_keys=True))
    return True


def main(argv: Optional[list] = None):
    args = parse_args(argv)
    try:
        settings = _settings(args.settings)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        setup_logging().error("Failed to load settings: %s", exc)
        sys.exit(1)

    logger = setup_logging(settings.logfile, logging.DEBUG if args.verbose else settings.log_level)
    logger.info("Starting %s", args.command)

    try:
        if args.command == "run":
            ok = _run(args, settings, logger)
        elif args.command == "plot":
            paths = plot_records(args.csv, args.out)
            for path in paths:
                print(path)
            ok = True
        elif args.command == "formulas":
            ok = _formulas(args, logger)
        else:
            ok = _audit(args, logger)
    except FileNotFoundError as exc:
        logger.error("File not found: %s", exc)
        sys.exit(1)
    except KeyError as exc:
        logger.error("Missing key: %s", exc)
        sys.exit(1)
    except ValueError as exc:
        logger.error("Invalid input: %s", exc)
        sys.exit(1)
    except OSError as exc:
        logger.error("Cannot write output: %s", exc)
        sys.exit(1)

    if not ok:
        logger.error("%s finished with failures", args.command)
        sys.exit(1)
    logger.info("%s finished", args.command)


if __name__ == "__main__":
    main()
