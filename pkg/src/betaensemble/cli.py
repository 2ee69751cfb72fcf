from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from typing import Awaitable, Callable, Dict, Optional, Sequence

from betaensemble.config import ExperimentConfig, load_config
from betaensemble.exceptions import (
    BetaEnsembleException,
    ConfigException,
    MissingInputException,
)
from betaensemble.harness import cmd_diag, cmd_fekete, cmd_ldp, cmd_sample
from betaensemble.records import RunRecord, config_hash

logger = logging.getLogger("betaensemble")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING_INPUT = 4

COMMANDS: Dict[str, Callable[[ExperimentConfig], Awaitable[RunRecord]]] = {
    "fekete": cmd_fekete,
    "sample": cmd_sample,
    "ldp": cmd_ldp,
    "diag": cmd_diag,
}


def _seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError(
            f"seed must be an unsigned 64-bit integer: {value}"
        )
    return seed


def _workers(value: str) -> int:
    workers = int(value)
    if workers < 1:
        raise argparse.ArgumentTypeError(f"workers must be at least 1: {value}")
    return workers


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="betaensemble",
        description=(
            "Beta-ensembles, Fekete configurations and equidistribution diagnostics."
        ),
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment configuration file")
    common.add_argument("--seed", type=_seed, help="override the configured seed")
    common.add_argument("--workers", type=_workers, help="worker processes")
    common.add_argument("--out", help="override the configured output directory")
    common.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="log INFO (-v) or DEBUG (-vv)",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, summary in (
        ("fekete", "near-Fekete configurations"),
        ("sample", "MCMC and exact beta = 2 samples"),
        ("ldp", "fit distance decay and tails"),
        ("diag", "Bernstein-Markov, mass and tau diagnostics"),
        ("validate-config", "validate and hash a configuration"),
    ):
        commands.add_parser(name, parents=[common], help=summary)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(
            args.config, seed=args.seed, output=args.out, workers=args.workers
        )
        if args.command == "validate-config":
            print(f"{args.config}: ok, config_hash={config_hash(config)}")
            return EXIT_OK
        record = asyncio.run(COMMANDS[args.command](config))
    except ConfigException as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputException as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except BetaEnsembleException as e:
        logger.debug("numerical failure", exc_info=True)
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{record.command}: {len(record.entries)} entries written to {config.output}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
