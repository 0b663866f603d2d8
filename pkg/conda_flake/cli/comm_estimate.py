import json
from argparse import Namespace, _SubParsersAction

from conda.auxlib.ish import dals
from conda.cli.conda_argparse import add_parser_json
from conda.exceptions import ArgumentError

from conda_flake.exceptions import ProtocolError
from conda_flake.protocol.wire import estimate_comm_time

UNITS = {"B": 1.0, "KB": 1e3, "MB": 1e6, "GB": 1e9}


def configure_parser(parser: _SubParsersAction) -> None:
    """Configure all subcommand arguments and options via argparse"""

    summary = "Estimate the time to transfer masked data over a link"
    description = summary
    epilog = dals(
        """
        T = datasize / bandwidth + latency * (1 + packetloss)

        Examples:

        1.31 MB over a 1.25 MB/s link::

            conda flake comm-estimate 1.31 --bandwidth 1.25

        The same over a VPN with 100 ms latency and 2% packet loss::

            conda flake comm-estimate 1.31 --bandwidth 1.25 --latency 0.1 --packetloss 0.02

        """
    )
    estimate = parser.add_parser(
        "comm-estimate",
        help=summary,
        description=description,
        epilog=epilog,
    )
    estimate.add_argument("datasize", metavar="DATASIZE", type=float)
    estimate.add_argument("--bandwidth", type=float, required=True, help="UNIT per second.")
    estimate.add_argument("--latency", type=float, default=0.0, help="Seconds.")
    estimate.add_argument("--packetloss", type=float, default=0.0, help="Fraction, 0.02 is 2%%.")
    estimate.add_argument(
        "--unit",
        choices=tuple(UNITS),
        default="MB",
        help="Unit of DATASIZE and of the bandwidth numerator (decimal).",
    )
    add_parser_json(estimate)


def execute(args: Namespace) -> int:
    """
    Entry point for the `conda flake comm-estimate` subcommand
    """
    scale = UNITS[args.unit]
    try:
        seconds = estimate_comm_time(
            args.datasize * scale, args.bandwidth * scale, args.latency, args.packetloss
        )
    except ProtocolError as exc:
        raise ArgumentError(str(exc))
    if args.json:
        print(json.dumps({"seconds": seconds}))
    else:
        print(f"{seconds:.3f} s")
    return 0
