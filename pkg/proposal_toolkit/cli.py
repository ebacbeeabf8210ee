#!/usr/bin/env python3
import argparse
import sys
from pathlib import Path
from typing import List, Optional
from . import __version__
from .config.loader import cli_overrides
from .main import run_ablate, run_eval, run_gen, run_infer, run_train, validate_run

COMMANDS = {
    "gen": (run_gen, "Generate the synthetic train/test scenes"),
    "train": (run_train, "Train the localization and confidence networks"),
    "infer": (run_infer, "Write ranked proposals for every split"),
    "eval": (run_eval, "Compute recall, AR and ABO tables for the test split"),
    "ablate": (run_ablate, "Compare the four accumulative pipeline variants"),
    "validate": (validate_run, "Validate a YAML run configuration"),
}


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", "-c",
        required=True,
        help="Path to YAML run configuration file"
    )
    parser.add_argument(
        "--seed",
        type=int,
        help="Global seed (overrides config)"
    )
    parser.add_argument(
        "--out", "-o",
        help="Output directory for all artifacts (overrides config)"
    )
    parser.add_argument(
        "--workers",
        type=int,
        help="Parallel workers; results do not depend on it"
    )
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        dest="assignments",
        help="Override a dotted config key, e.g. --set training.epochs=5 (repeatable)"
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="Logging level (default: INFO)"
    )
    parser.add_argument(
        "--verbose", "-v",
        action="store_const",
        const="DEBUG",
        dest="log_level",
        help="Enable verbose output (equivalent to --log-level DEBUG)"
    )


def create_parser() -> argparse.ArgumentParser:
    """Create command line argument parser."""
    parser = argparse.ArgumentParser(
        prog="propkit",
        description="Scale-aware pixel-wise object proposal toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  propkit gen --config proposal_toolkit/examples/smoke.yaml
  propkit train --config run.yaml --workers 3
  propkit infer --config run.yaml --out results/seed7 --seed 7
  propkit eval --config run.yaml
  propkit ablate --config run.yaml --set evaluation.abo_n=500
  propkit validate --config run.yaml --verbose
        """
    )

    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__}"
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    for name, (_, help_text) in COMMANDS.items():
        _add_common_arguments(subparsers.add_parser(name, help=help_text))

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 1

    config_file = Path(args.config)
    if not config_file.exists():
        print(f"Error: Configuration file '{args.config}' not found", file=sys.stderr)
        return 2

    if config_file.suffix.lower() not in ['.yaml', '.yml']:
        print(f"Warning: File '{args.config}' doesn't have .yaml or .yml extension", file=sys.stderr)

    overrides = cli_overrides(args.seed, args.out, args.workers, args.assignments)
    command, _ = COMMANDS[args.command]
    try:
        return command(str(config_file), overrides, args.log_level)
    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
