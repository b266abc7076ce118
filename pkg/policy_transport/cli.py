"""Command line entry point: policy-transport {fit,assign,simulate,ot}."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Any, Optional, Sequence

from .__version__ import __version__
from .commands import CommandResult, run_command
from .config import ConfigFactory, Profile
from .exceptions import NumericalFailure, SchemaError
from .schemas import validate
from .serialization import load_config_file

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_INPUT = 2

log = logging.getLogger(__name__)

DESCRIPTIONS = {
    "fit": "Fit a left-censored Tobit model to training data.",
    "assign": "Build capacity-constrained assignment rules on a covariate grid.",
    "simulate": "Estimate risk curves of the plug-in and ex-post Bayes rules.",
    "ot": "Solve a discrete transport problem or measure a Wasserstein distance.",
}


def build_parser() -> argparse.ArgumentParser:
    """The argument parser with one subcommand per command."""
    parser = argparse.ArgumentParser(
        prog="policy-transport",
        description="Capacity-constrained treatment assignment via optimal transport.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, description in DESCRIPTIONS.items():
        sub = subparsers.add_parser(name, help=description, description=description)
        sub.add_argument(
            "--config",
            required=True,
            help="JSON or YAML configuration file for the command.",
        )
        sub.add_argument("--out", help="Output directory; overrides the file.")
        sub.add_argument(
            "--seed", type=int, help="Random seed; overrides the configuration file."
        )
        sub.add_argument(
            "-v", "--verbose", action="store_true", help="Log at debug level."
        )
        if name == "simulate":
            sub.add_argument(
                "--profile",
                choices=[p.value for p in Profile],
                help="Preset replication and draw counts; file values take precedence.",
            )
    return parser


def resolve_config_args(args: argparse.Namespace) -> dict[str, Any]:
    """Merge the configuration file with command line overrides.

    Precedence, lowest first: profile presets, the file, --seed and --out.
    """
    content = load_config_file(args.config)
    validate(content, args.command)
    if getattr(args, "profile", None) is not None:
        content.setdefault("profile", args.profile)
    if args.seed is not None:
        content["seed"] = args.seed
    if args.out is not None:
        content["out"] = args.out
    return content


def execute(args: argparse.Namespace) -> CommandResult:
    """Build the configuration for args and run its command."""
    factory = ConfigFactory.from_str(args.command)
    config = factory.create_config(**resolve_config_args(args))
    return run_command(config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line interface and return an exit code.

    Exit codes are 0 on success, 1 on a numerical failure or a flagged result and 2
    on invalid input.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        result = execute(args)
    except (SchemaError, ValueError, FileNotFoundError) as e:
        log.error("Invalid input: %s", e)
        return EXIT_INPUT
    except NumericalFailure as e:
        log.error("Numerical failure: %s", e)
        return EXIT_NUMERICAL

    for name, path in result.outputs.items():
        log.info("Wrote %s to %s", name, path)
    if not result.success:
        log.warning("%s finished with a flagged result", args.command)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
