import json
from argparse import Namespace, _SubParsersAction
from pathlib import Path

from conda.auxlib.ish import dals
from conda.cli.conda_argparse import add_parser_json
from conda.exceptions import ArgumentError

from conda_flake.cli.run import float_list, int_list
from conda_flake.exceptions import ConfigError
from conda_flake.experiments import (
    DEFAULT_SCALING_SIZES,
    run_scaling_benchmark,
    run_update_iterations,
)
from conda_flake.model_selection import DEFAULT_C_GRID, DEFAULT_DEGREE_GRID
from conda_flake.reports import emit_report

#: sizes used unless --full or --sizes is given
DESK_SIZES = (500, 1000)


def _add_common(parser) -> None:
    parser.add_argument("--parties", type=int, default=3)
    parser.add_argument("--features", type=int, default=20)
    parser.add_argument("--k", type=int, help="Masked width, default twice the features.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--repeats", type=int, default=10)
    parser.add_argument("--output", type=Path, help="Report file (.csv or .jsonl).")
    # --json, --console, -v and -q
    add_parser_json(parser)


def configure_parser(parser: _SubParsersAction) -> None:
    """Configure the bench-scaling and bench-update subcommands"""

    summary = "Time masking, Gram computation and training over growing data sets"
    scaling = parser.add_parser(
        "bench-scaling",
        help=summary,
        description=summary,
        epilog=dals(
            """
            BLAS is pinned to one thread while timing.

            Examples:

            Desk-scale series::

                conda flake bench-scaling --repeats 3 --output scaling.csv

            The full 500 to 8000 sample series::

                conda flake bench-scaling --full --output scaling.csv

            """
        ),
    )
    _add_common(scaling)
    scaling.add_argument("--sizes", type=int_list, help="Comma separated total sample counts.")
    scaling.add_argument("--full", action="store_true", help="Use 500,1000,2000,4000,8000.")
    scaling.add_argument("--classes", type=int, default=4)
    scaling.add_argument("--c-grid", type=float_list, default=DEFAULT_C_GRID)
    scaling.add_argument("--degree-grid", type=int_list, default=DEFAULT_DEGREE_GRID)

    summary = "Time masking and Gram extension over update rounds"
    update = parser.add_parser(
        "bench-update",
        help=summary,
        description=summary,
        epilog=dals(
            """
            Every round after the first adds INCREMENT samples per party; each
            extended Gram matrix is checked against a full recomputation. A new
            party then joins and party1 leaves, unless --no-membership is given.

            Examples::

                conda flake bench-update --start 1000 --increment 1000 --rounds 4

            """
        ),
    )
    _add_common(update)
    update.add_argument("--start", type=int, default=1000, help="Samples per party at first.")
    update.add_argument("--increment", type=int, default=1000, help="New samples per round.")
    update.add_argument("--rounds", type=int, default=4, help="Rounds including the first.")
    update.add_argument("--classes", type=int, default=2)
    update.add_argument(
        "--no-membership",
        dest="membership",
        action="store_false",
        help="Skip the join and leave rounds.",
    )


def _finish(reports, args: Namespace) -> int:
    if args.output is not None:
        emit_report(reports, args.output)
    summaries = [report.summary() | {"updates": report.update_stats()} for report in reports]
    if args.json:
        print(json.dumps(summaries, indent=2))
        return 0
    for summary in summaries:
        print(
            f"n={summary['size']}: masking {summary['masking_s_mean']:.6f}s, "
            f"gram {summary['gram_s_mean']:.6f}s, training {summary['training_s_mean']:.6f}s "
            f"({summary['repeats']} repeats)"
        )
        for stats in summary["updates"]:
            step = stats["kind"] if stats["kind"] != "update" else f"round {stats['round']}"
            print(
                f"  {step}: {stats['rows']:+d} rows, masking "
                f"{stats['masking_mean']:.6f}s, gram {stats['gram_mean']:.6f}s"
            )
    return 0


def execute_scaling(args: Namespace) -> int:
    """
    Entry point for the `conda flake bench-scaling` subcommand
    """
    sizes = DEFAULT_SCALING_SIZES if args.full else (args.sizes or DESK_SIZES)
    try:
        reports = run_scaling_benchmark(
            sizes,
            repeats=args.repeats,
            parties=args.parties,
            features=args.features,
            classes=args.classes,
            k=args.k,
            seed=args.seed,
            c_grid=args.c_grid,
            degree_grid=args.degree_grid,
        )
    except ConfigError as exc:
        raise ArgumentError(str(exc))
    return _finish(reports, args)


def execute_update(args: Namespace) -> int:
    """
    Entry point for the `conda flake bench-update` subcommand
    """
    try:
        report = run_update_iterations(
            args.start,
            args.increment,
            args.rounds,
            parties=args.parties,
            features=args.features,
            classes=args.classes,
            k=args.k,
            seed=args.seed,
            repeats=args.repeats,
            membership=args.membership,
        )
    except ConfigError as exc:
        raise ArgumentError(str(exc))
    return _finish([report], args)
