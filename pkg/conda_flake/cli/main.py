"""
Entry point for all conda flake subcommands

See `conda_flake.plugin` to see how these are registered with conda
"""

from __future__ import annotations

import argparse
from logging import getLogger

from conda.exceptions import ArgumentError

from conda_flake.cli.bench import (
    configure_parser as configure_parser_bench,
)
from conda_flake.cli.bench import (
    execute_scaling,
    execute_update,
)
from conda_flake.cli.comm_estimate import (
    configure_parser as configure_parser_comm_estimate,
)
from conda_flake.cli.comm_estimate import (
    execute as execute_comm_estimate,
)
from conda_flake.cli.gen_data import (
    configure_parser as configure_parser_gen_data,
)
from conda_flake.cli.gen_data import (
    execute as execute_gen_data,
)
from conda_flake.cli.run import (
    configure_parser as configure_parser_run,
)
from conda_flake.cli.run import (
    execute as execute_run,
)

logger = getLogger(__name__)


def generate_parser():
    """
    Generate the main argument parser for conda flake.
    """
    parser = argparse.ArgumentParser(
        prog="conda flake",
        description="Exact kernel SVMs over masked, horizontally partitioned data.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    configure_parser(parser)
    return parser


def configure_parser(parser: argparse.ArgumentParser):
    """
    Entry point for all argparse configuration
    """

    sub_parsers = parser.add_subparsers(
        metavar="COMMAND",
        title="commands",
        description="The following subcommands are available.",
        dest="cmd",
        required=True,
    )

    configure_parser_gen_data(sub_parsers)
    configure_parser_run(sub_parsers)
    configure_parser_bench(sub_parsers)
    configure_parser_comm_estimate(sub_parsers)


def execute(args: argparse.Namespace) -> int:
    if args.cmd == "gen-data":
        return execute_gen_data(args)
    elif args.cmd == "run":
        return execute_run(args)
    elif args.cmd == "bench-scaling":
        return execute_scaling(args)
    elif args.cmd == "bench-update":
        return execute_update(args)
    elif args.cmd == "comm-estimate":
        return execute_comm_estimate(args)
    else:
        raise ArgumentError(f"Unknown subcommand: {args.cmd}")
