# Standard library
import os
import logging
import argparse
from pathlib import Path

# Third party
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler

# Local
try:
    from causalpima.config import load_config
    from causalpima.constants import LOG_LEVEL_ENV
    from causalpima.commands import cmd_generate, cmd_train, cmd_report
    from causalpima.errors import (
        CapacityError,
        ConfigurationError,
        ContractViolation,
        FactorizationError,
        NumericalFault,
    )
except ImportError:
    from config import load_config
    from constants import LOG_LEVEL_ENV
    from commands import cmd_generate, cmd_train, cmd_report
    from errors import (
        CapacityError,
        ConfigurationError,
        ContractViolation,
        FactorizationError,
        NumericalFault,
    )

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


#########
# HELPERS
#########


def configure_logging(verbose: int, console: Console):
    level = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
    if verbose == 1:
        level = "INFO"
    elif verbose > 1:
        level = "DEBUG"

    logger = logging.getLogger("causalpima")
    logger.handlers.clear()
    logger.addHandler(RichHandler(console=console, show_path=False))
    logger.propagate = False
    try:
        logger.setLevel(level)
    except ValueError:
        logger.setLevel(logging.WARNING)
        logger.warning("Ignoring unknown log level %r from %s", level, LOG_LEVEL_ENV)


def get_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalpima",
        description="Learn a causal DAG over the clusters of a multimodal VAE.",
    )
    parser.add_argument(
        "--verbose",
        "-v",
        action="count",
        default=0,
        help=f"Log INFO (-v) or DEBUG (-vv). Defaults to ${LOG_LEVEL_ENV} or WARNING.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Generate a synthetic dataset.")
    generate.add_argument("--config", type=str, required=True, help="Path to a JSON config.")
    generate.add_argument("--out", type=str, required=True, help="Dataset directory to write.")
    generate.add_argument("--seed", type=int, default=None, help="Overrides the config seed.")

    train = commands.add_parser("train", help="Train a model and export its artifacts.")
    train.add_argument("--config", type=str, required=True, help="Path to a JSON config.")
    train.add_argument("--out", type=str, required=True, help="Run directory to write.")
    train.add_argument(
        "--dataset",
        type=str,
        default=None,
        help="Dataset directory from `generate`. Generated from the config if omitted.",
    )
    train.add_argument("--seed", type=int, default=None, help="Overrides the config seed.")
    train.add_argument("--resume", type=str, default=None, help="Checkpoint to resume from.")

    report = commands.add_parser("report", help="Summarize a finished run.")
    report.add_argument("--out", type=str, required=True, help="Run directory to summarize.")

    return parser


def run(args: argparse.Namespace, console: Console):
    if args.command == "report":
        cmd_report(Path(args.out), console)
        return

    config = load_config(args.config, seed=args.seed)
    if args.command == "generate":
        cmd_generate(config, Path(args.out), console)
    else:
        cmd_train(config, Path(args.out), args.dataset, args.resume, console)


######
# MAIN
######


def main(argv: list[str] | None = None) -> int:
    args = get_parser().parse_args(argv)
    console = Console()
    errors = Console(stderr=True)
    configure_logging(args.verbose, errors)

    try:
        run(args, console)
    except (NumericalFault, FactorizationError) as fault:
        errors.print(f"[bold red]Numerical fault:[/bold red] {fault}")
        return EXIT_NUMERICAL
    except (
        ConfigurationError,
        ContractViolation,
        CapacityError,
        OSError,
        pd.errors.ParserError,
        pd.errors.EmptyDataError,
    ) as error:
        errors.print(f"[bold red]Error:[/bold red] {error}")
        return EXIT_USAGE

    return EXIT_OK
