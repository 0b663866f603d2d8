import json
from argparse import Namespace, _SubParsersAction
from pathlib import Path

from conda.auxlib.ish import dals
from conda.cli.conda_argparse import add_parser_json
from conda.exceptions import ArgumentError

from conda_flake.data import gen_synthetic, partition, write_csv
from conda_flake.exceptions import DataFormatError
from conda_flake.protocol.registry import provision


def configure_parser(parser: _SubParsersAction) -> None:
    """Configure all subcommand arguments and options via argparse"""

    summary = "Generate seeded synthetic classification data split across input parties"
    description = summary
    epilog = dals(
        """
        Balanced Gaussian blobs, one CSV per party with a ``label`` column.

        Examples:

        Three parties with 300 samples each and 20 features::

            conda flake gen-data --parties 3 --samples 900 --features 20 ./data

        Also provision keys and a signed registry for a real deployment::

            conda flake gen-data --parties 3 --samples 900 --keys ./data

        """
    )
    gen_data = parser.add_parser(
        "gen-data",
        help=summary,
        description=description,
        epilog=epilog,
    )
    gen_data.add_argument(
        "output_dir",
        metavar="DIRECTORY",
        type=Path,
        help="Directory to write party<N>.csv files into.",
    )
    gen_data.add_argument("--samples", type=int, default=900, help="Total number of samples.")
    gen_data.add_argument("--features", type=int, default=20)
    gen_data.add_argument("--classes", type=int, default=2)
    gen_data.add_argument("--parties", type=int, default=3)
    gen_data.add_argument("--seed", type=int, default=0)
    gen_data.add_argument(
        "--separation",
        type=float,
        default=4.0,
        help="Spread of the class means in within-class standard deviations.",
    )
    gen_data.add_argument(
        "--keys",
        action="store_true",
        help="Also write per-party key files and a signed registry.json.",
    )
    add_parser_json(gen_data)


def execute(args: Namespace) -> int:
    """
    Entry point for the `conda flake gen-data` subcommand
    """
    if args.parties < 1:
        raise ArgumentError("--parties must be at least 1.")
    try:
        data = gen_synthetic(args.samples, args.features, args.classes, args.seed, args.separation)
    except DataFormatError as exc:
        raise ArgumentError(str(exc))

    output_dir = Path(args.output_dir).expanduser()
    output_dir.mkdir(parents=True, exist_ok=True)
    party_ids = [f"party{i}" for i in range(1, args.parties + 1)]
    written = {}
    for party_id, share in zip(party_ids, partition(data, args.parties)):
        written[party_id] = str(write_csv(share, output_dir / f"{party_id}.csv"))
        if not args.json:
            print(f"{party_id}: {share.n_samples} samples -> {written[party_id]}")

    registry_path = None
    if args.keys:
        registry_path, _, authority = provision(party_ids, output_dir / "keys")
        (output_dir / "keys" / "authority.pub").write_text(authority.hex())
        if not args.json:
            print(f"Registry at {registry_path} (authority key in authority.pub)")
    if args.json:
        registry = str(registry_path) if registry_path else None
        print(json.dumps({"parties": written, "registry": registry}, indent=2))
    return 0
