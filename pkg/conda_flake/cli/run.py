import json
from argparse import Namespace, _SubParsersAction
from dataclasses import replace
from pathlib import Path

from conda.auxlib.ish import dals
from conda.base.context import context
from conda.cli.conda_argparse import add_parser_json
from conda.exceptions import ArgumentError

from conda_flake.exceptions import ConfigError, KernelParameterError
from conda_flake.experiments import ISOLATIONS, MODES, ExperimentConfig, run_experiment
from conda_flake.kernels import KERNEL_KINDS, SCALE, KernelSpec
from conda_flake.metrics import AVERAGING
from conda_flake.utils import default_data_dir


def float_list(value: str) -> tuple:
    return tuple(float(item) for item in value.split(",") if item.strip())


def int_list(value: str) -> tuple:
    return tuple(int(item) for item in value.split(",") if item.strip())


def gamma_value(value: str):
    return value if value == SCALE else float(value)


def configure_parser(parser: _SubParsersAction) -> None:
    """Configure all subcommand arguments and options via argparse"""

    summary = "Run a federated and/or naive grid-searched SVM experiment"
    description = summary
    epilog = dals(
        """
        Federated mode runs the function party and every input party as
        separate processes talking over loopback TCP. Naive mode trains on the
        concatenated plaintext. ``both`` runs the two and reports the AUC
        difference.

        Examples:

        Desk-scale parity run::

            conda flake run --parties 3 --samples-per-party 300 --mode both

        Settings from a file, some overridden::

            conda flake run --config experiment.json --seed 7 --output report.csv

        """
    )
    run = parser.add_parser(
        "run",
        help=summary,
        description=description,
        epilog=epilog,
    )
    run.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields.")
    run.add_argument("--parties", type=int)
    run.add_argument("--samples-per-party", type=int)
    run.add_argument("--features", type=int)
    run.add_argument("--classes", type=int)
    run.add_argument("--k", type=int, help="Masked width, default twice the features.")
    run.add_argument("--kernel", choices=KERNEL_KINDS)
    run.add_argument("--v", type=float, help="Polynomial kernel offset.")
    run.add_argument("--gamma", type=gamma_value, help=f"Polynomial kernel scale or {SCALE!r}.")
    run.add_argument("--c-grid", type=float_list, help="Comma separated values of C.")
    run.add_argument("--degree-grid", type=int_list, help="Comma separated degrees.")
    run.add_argument(
        "--sigma",
        type=float,
        help="RBF kernel width; the only width tried unless --sigma-grid is given.",
    )
    run.add_argument("--sigma-grid", type=float_list, help="Comma separated RBF widths.")
    run.add_argument("--averaging", choices=AVERAGING)
    run.add_argument("--seed", type=int)
    run.add_argument("--separation", type=float)
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--isolation", choices=ISOLATIONS)
    run.add_argument("--chunk-rows", type=int)
    run.add_argument("--timeout", type=float)
    run.add_argument("--listen-address", help="Address the function party binds to.")
    run.add_argument("--fold-seed", type=int)
    run.add_argument("--output", type=Path, help="Report file (.csv or .jsonl).")
    run.add_argument(
        "--keep-payloads",
        action="store_true",
        help="Retain the function party's masked payloads in the conda-flake data directory.",
    )
    run.add_argument(
        "--store-dir",
        type=Path,
        help="Retain the function party's masked payloads here instead.",
    )
    run.add_argument(
        "--export-dir",
        type=Path,
        help="Write the federated Gram and kernel matrices (.flk, .csv), CV report and model.",
    )
    add_parser_json(run)


def build_config(args: Namespace) -> ExperimentConfig:
    """Defaults, then conda settings, then --config, then flags."""
    config = ExperimentConfig(
        chunk_rows=context.plugins.flake_chunk_rows,
        timeout=context.plugins.flake_timeout,
        listen_address=context.plugins.flake_listen_address,
    )
    store_dir = args.store_dir
    if store_dir is None and args.keep_payloads:
        store_dir = default_data_dir() / "payloads"
    if args.config is not None:
        if not args.config.exists():
            raise ArgumentError(f"Could not open {args.config}")
        config = ExperimentConfig.from_file(args.config, base=config)
    config = config.updated(
        parties=args.parties,
        samples_per_party=args.samples_per_party,
        features=args.features,
        classes=args.classes,
        k=args.k,
        c_grid=args.c_grid,
        degree_grid=args.degree_grid,
        sigma_grid=args.sigma_grid,
        averaging=args.averaging,
        seed=args.seed,
        separation=args.separation,
        mode=args.mode,
        isolation=args.isolation,
        chunk_rows=args.chunk_rows,
        timeout=args.timeout,
        listen_address=args.listen_address,
        fold_seed=args.fold_seed,
        output=args.output,
        store_dir=store_dir,
        export_dir=args.export_dir,
        verbose=bool(args.verbosity) or None,
    )
    overrides = {
        name: value
        for name, value in (
            ("kind", args.kernel),
            ("v", args.v),
            ("gamma", args.gamma),
            ("sigma", args.sigma),
        )
        if value is not None
    }
    if args.sigma is not None and args.sigma_grid is None:
        config = replace(config, sigma_grid=(args.sigma,))
    try:
        if overrides:
            config = replace(config, kernel=KernelSpec(**{**config.kernel.to_dict(), **overrides}))
        return config.validate()
    except (ConfigError, KernelParameterError) as exc:
        raise ArgumentError(str(exc))


def execute(args: Namespace) -> int:
    """
    Entry point for the `conda flake run` subcommand
    """
    config = build_config(args)
    result = run_experiment(config)
    summary = {
        "naive": result.naive.to_dict() if result.naive else None,
        "federated": result.federated.to_dict() if result.federated else None,
        "auc_difference": result.auc_difference,
        "gram_error": result.gram_error,
        "timings": {name: report.summary() for name, report in result.timings.items()},
    }
    if args.json:
        print(json.dumps(summary, indent=2))
        return 0
    for name, report in (("naive", result.naive), ("federated", result.federated)):
        if report is not None:
            print(
                f"{name}: mean AUC {report.mean_auc:.6f} +/- {report.std_auc:.6f} "
                f"(C={report.best_c:g}, {report.param_name}={report.best_param:g})"
            )
    if result.auc_difference is not None:
        print(f"AUC difference: {result.auc_difference:.3g}")
        print(f"Gram relative error: {result.gram_error:.3g}")
    if config.output is not None:
        print(f"Report written to {config.output}")
    return 0
