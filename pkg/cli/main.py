"""
Command-line entry point.

    python -m cli.main run    --config exp.json [--seed N] [--out report.json]
    python -m cli.main sweep  --config exp.json --axis k|h --values 1,2,4 --out curves.csv
    python -m cli.main ledger --config exp.json [--csv ledger.csv]

Exit statuses: 0 success, 2 invalid configuration or data, 3 divergence,
4 frozen-parameter drift.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from shared.config import settings
from shared.errors import (
    ConfigError,
    DatasetError,
    DivergenceError,
    FrozenDriftError,
    InputError,
    LabelError,
    MetricError,
    PeftError,
    ScoreError,
)
from tuning.ledger import format_ledger, write_ledger_csv
from .runner import (
    ledger_for_experiment,
    load_experiment,
    report_json,
    run_experiment,
    sweep,
    write_report,
    write_sweep_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_FROZEN_DRIFT = 4


def _parse_values(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"values must be comma-separated integers: {text}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peft-audio", description="Parameter-efficient tuning of audio transformers")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Train one trial and write its report")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", type=Path, default=None, help="Report path (defaults to the config's output)")

    sweep_cmd = commands.add_parser("sweep", help="Scale prompts (k) or adapter width (h)")
    sweep_cmd.add_argument("--config", required=True, type=Path)
    sweep_cmd.add_argument("--axis", required=True, choices=["k", "h"])
    sweep_cmd.add_argument("--values", required=True, type=_parse_values)
    sweep_cmd.add_argument("--out", required=True, type=Path)
    sweep_cmd.add_argument("--seed", type=int, default=None)

    ledger = commands.add_parser("ledger", help="Print the parameter ledger without training")
    ledger.add_argument("--config", required=True, type=Path)
    ledger.add_argument("--csv", type=Path, default=None)
    return parser


def _run(args) -> int:
    config = load_experiment(args.config)
    report = run_experiment(config, seed=args.seed)
    out = args.out or (Path(config.output) if config.output else None)
    if out is None:
        sys.stdout.write(report_json(report))
    else:
        write_report(report, out)
    return EXIT_OK


def _sweep(args) -> int:
    config = load_experiment(args.config)
    rows = sweep(config, args.axis, args.values, seed=args.seed)
    write_sweep_csv(rows, args.out)
    return EXIT_OK


def _ledger(args) -> int:
    config = load_experiment(args.config)
    ledger = ledger_for_experiment(config)
    print(format_ledger(ledger))
    if args.csv is not None:
        write_ledger_csv(ledger, args.csv)
    return EXIT_OK


COMMANDS = {"run": _run, "sweep": _sweep, "ledger": _ledger}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch, and map failures to exit statuses."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.log_level.upper())
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ConfigError, DatasetError, InputError, LabelError, MetricError, ScoreError) as e:
        logger.error(f"Invalid experiment: {e}")
        return EXIT_INVALID
    except DivergenceError as e:
        logger.error(str(e))
        return EXIT_DIVERGED
    except FrozenDriftError as e:
        logger.error(str(e))
        return EXIT_FROZEN_DRIFT
    except PeftError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
