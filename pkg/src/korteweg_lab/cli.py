"""Command line entry point: ``korteweg-lab run`` and ``korteweg-lab compare``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, StepFailure, VacuumError
from .experiments import (
    EXIT_CONFIG,
    EXIT_NAN,
    EXIT_OK,
    EXIT_VACUUM,
    compare_runs,
    load_config,
    run_experiment,
    write_outcome,
)

log = logging.getLogger("korteweg_lab")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="korteweg-lab", description="Run and compare Korteweg-system experiments.")
    ap.add_argument("--quiet", action="store_true", help="only report errors")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a JSON config")
    r.add_argument("config", help="path to the JSON config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--out", default=None, help="override the output directory")
    r.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    c = sub.add_parser("compare", help="per-snapshot differences of two runs as CSV")
    c.add_argument("manifest_a")
    c.add_argument("manifest_b")
    c.add_argument("--out", default=None, help="write the CSV here instead of stdout")
    c.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return ap


def _run(args) -> int:
    cfg = load_config(args.config, seed=args.seed, output=args.out)
    log.info("running %s on %s", cfg.experiment, cfg.grid.to_dict())
    outcome = run_experiment(cfg)
    manifest = write_outcome(cfg, outcome)
    if outcome.termination not in ("completed", "non-contracting"):
        log.error("run ended early (%s): %s", outcome.termination, outcome.message)
    log.info("wrote %d artifacts and %s", len(outcome.artifacts), manifest)
    return outcome.exit_code


def _compare(args) -> int:
    text = compare_runs(args.manifest_a, args.manifest_b)
    if args.out:
        Path(args.out).write_text(text)
        log.info("wrote %s", args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s: %(message)s", force=True)
    try:
        return _run(args) if args.command == "run" else _compare(args)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except VacuumError as exc:
        log.error("vacuum: %s", exc)
        return EXIT_VACUUM
    except StepFailure as exc:
        log.error("non-finite state: %s", exc)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
