"""
Desk-scale experiments.

`run_experiment` trains the same grid-searched SVM twice: once on the plain
concatenated data (naive) and once through the masking protocol with every
party in its own process (federated). `run_scaling_benchmark` and
`run_update_iterations` time the individual stages.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import tempfile
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field, fields, replace
from logging import getLogger
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from conda_flake.data import DataMatrix, gen_synthetic, partition, write_csv
from conda_flake.exceptions import ConfigError, SpawnError, UpdateMismatchError
from conda_flake.gram import (
    GramMatrix,
    PayloadStore,
    add_party,
    compute_gram,
    extend_with_data,
    plaintext_gram,
    recompute_gram,
    remove_party,
)
from conda_flake.kernels import SCALE, KernelSpec
from conda_flake.linalg import MaskDims
from conda_flake.masking import advance_iteration, build_mask_context, mask
from conda_flake.metrics import AVERAGING
from conda_flake.model_selection import (
    DEFAULT_C_GRID,
    DEFAULT_DEGREE_GRID,
    FOLD_SEED,
    CvReport,
    cross_validate_grid,
)
from conda_flake.protocol.envelope import CryptoSuite
from conda_flake.protocol.registry import build_registry, generate_party_keys, provision
from conda_flake.protocol.session import (
    DEFAULT_TIMEOUT,
    FunctionParty,
    FunctionPartyConfig,
    FunctionPartyResult,
    InputPartyConfig,
    InputPartyResult,
    run_input_party,
)
from conda_flake.protocol.wire import (
    DEFAULT_CHUNK_ROWS,
    estimate_comm_time,
    read_matrix_file,
    wire_size,
)
from conda_flake.reports import TimingReport, TimingRun, UpdateTiming, emit_report
from conda_flake.utils import Stopwatch, relative_frobenius

logger = getLogger(f"conda.{__name__}")

MODES = ("federated", "naive", "both")
ISOLATIONS = ("process", "thread")

#: link profile of a site-to-site VPN used for communication estimates
VPN_BANDWIDTH = 1.25e6
VPN_LATENCY_S = 0.1
VPN_PACKETLOSS = 0.02

DEFAULT_SCALING_SIZES = (500, 1000, 2000, 4000, 8000)
UPDATE_TOLERANCE = 1e-10
READY_POLL_S = 0.05
SINGLE_THREAD_ENV = {
    "OMP_NUM_THREADS": "1",
    "OPENBLAS_NUM_THREADS": "1",
    "MKL_NUM_THREADS": "1",
}


def vpn_comm_estimate(nbytes: int) -> float:
    return estimate_comm_time(nbytes, VPN_BANDWIDTH, VPN_LATENCY_S, VPN_PACKETLOSS)


@dataclass
class ExperimentConfig:
    parties: int = 3
    samples_per_party: int = 300
    features: int = 20
    classes: int = 2
    k: Optional[int] = None
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("polynomial", gamma=SCALE))
    c_grid: Tuple[float, ...] = DEFAULT_C_GRID
    degree_grid: Tuple[int, ...] = DEFAULT_DEGREE_GRID
    sigma_grid: Optional[Tuple[float, ...]] = None
    averaging: str = "macro"
    seed: int = 0
    separation: float = 4.0
    mode: str = "both"
    isolation: str = "process"
    chunk_rows: int = DEFAULT_CHUNK_ROWS
    timeout: float = DEFAULT_TIMEOUT
    listen_address: str = "127.0.0.1"
    fold_seed: int = FOLD_SEED
    output: Optional[Path] = None
    #: retain masked payloads here as .flk files, per party
    store_dir: Optional[Path] = None
    #: function party outputs (matrices as .flk and .csv, CV report, model) go here
    export_dir: Optional[Path] = None
    verbose: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.isolation not in ISOLATIONS:
            raise ConfigError(f"isolation must be one of {ISOLATIONS}, got {self.isolation!r}")
        if self.averaging not in AVERAGING:
            raise ConfigError(f"averaging must be one of {AVERAGING}, got {self.averaging!r}")
        if self.parties < 1:
            raise ConfigError(f"need at least one party, got {self.parties}")
        if self.mode != "naive" and self.parties < 2:
            raise ConfigError(f"{self.mode} mode needs at least 2 parties, got {self.parties}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.samples_per_party < self.classes * 5:
            raise ConfigError(
                f"samples_per_party={self.samples_per_party} is below classes*5="
                f"{self.classes * 5}; stratified 5-fold CV is infeasible"
            )
        if self.features < 1:
            raise ConfigError(f"need at least one feature, got {self.features}")
        if self.k is not None and self.k <= self.features:
            raise ConfigError(f"k={self.k} must exceed features={self.features}")
        if not self.c_grid or not self.degree_grid:
            raise ConfigError("c_grid and degree_grid must not be empty")
        return self

    @property
    def party_ids(self) -> List[str]:
        return [f"party{i}" for i in range(1, self.parties + 1)]

    @property
    def dims(self) -> MaskDims:
        return MaskDims.for_features(self.features, self.k)

    def seeds(self) -> Tuple[int, List[int]]:
        """Shared mask seed and one private seed per party, all derived from ``seed``."""
        state = np.random.SeedSequence(self.seed).generate_state(self.parties + 1, np.uint64)
        return int(state[0]), [int(value) for value in state[1:]]

    def to_dict(self) -> dict:
        data = asdict(self)
        data["kernel"] = self.kernel.to_dict()
        data["output"] = str(self.output) if self.output else None
        data["store_dir"] = str(self.store_dir) if self.store_dir else None
        data["export_dir"] = str(self.export_dir) if self.export_dir else None
        return data

    @classmethod
    def from_dict(
        cls, data: dict, base: Optional["ExperimentConfig"] = None
    ) -> "ExperimentConfig":
        """Settings in ``data`` on top of ``base`` (or the defaults)."""
        known = {item.name for item in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown experiment settings: {', '.join(unknown)}")
        data = dict(data)
        if isinstance(data.get("kernel"), dict):
            data["kernel"] = KernelSpec.from_dict(data["kernel"])
        for name in ("c_grid", "degree_grid", "sigma_grid"):
            if data.get(name) is not None:
                data[name] = tuple(data[name])
        for name in ("output", "store_dir", "export_dir"):
            if data.get(name) is not None:
                data[name] = Path(data[name])
        return replace(base, **data) if base is not None else cls(**data)

    @classmethod
    def from_file(
        cls, path: Path, base: Optional["ExperimentConfig"] = None
    ) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read experiment config {path}: {exc}")
        return cls.from_dict(data, base)

    def updated(self, **overrides) -> "ExperimentConfig":
        """Copy with every override that is not ``None`` applied."""
        changes = {key: value for key, value in overrides.items() if value is not None}
        return replace(self, **changes)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    naive: Optional[CvReport] = None
    federated: Optional[CvReport] = None
    timings: Dict[str, TimingReport] = field(default_factory=dict)
    gram_error: Optional[float] = None

    @property
    def auc_difference(self) -> Optional[float]:
        if self.naive is None or self.federated is None:
            return None
        return abs(self.federated.mean_auc - self.naive.mean_auc)

    @property
    def max_fold_difference(self) -> Optional[float]:
        if self.naive is None or self.federated is None:
            return None
        pairs = zip(self.federated.fold_aucs, self.naive.fold_aucs)
        return max(abs(fed - naive) for fed, naive in pairs)

    def reports(self) -> list:
        return [
            report for report in (self.naive, self.federated) if report is not None
        ] + list(self.timings.values())


def _experiment_data(config: ExperimentConfig) -> Tuple[DataMatrix, List[DataMatrix]]:
    data = gen_synthetic(
        config.parties * config.samples_per_party,
        config.features,
        config.classes,
        config.seed,
        config.separation,
    )
    return data, partition(data, config.parties)


def _cross_validate(gram, labels: np.ndarray, config: ExperimentConfig) -> CvReport:
    return cross_validate_grid(
        gram,
        labels,
        config.c_grid,
        config.degree_grid,
        kernel=config.kernel,
        sigma_grid=config.sigma_grid,
        averaging=config.averaging,
        seed=config.fold_seed,
    )


def run_naive(
    parts: Sequence[DataMatrix], config: ExperimentConfig
) -> Tuple[CvReport, TimingRun, np.ndarray]:
    """Centralized baseline: Gram matrix of the concatenated plaintext."""
    with Stopwatch("naive gram") as gram_timer:
        gram = plaintext_gram(zip(config.party_ids, parts))
    labels = DataMatrix.concatenate(parts).labels
    with Stopwatch("naive training") as training_timer:
        report = _cross_validate(gram, labels, config)
    timing = TimingRun(gram_s=gram_timer.elapsed, training_s=training_timer.elapsed)
    return report, timing, gram.values


def _function_config(registry, config: ExperimentConfig, **extra) -> FunctionPartyConfig:
    extra.setdefault("store_dir", config.store_dir)
    extra.setdefault("output_dir", config.export_dir)
    extra.setdefault("export_csv", config.export_dir is not None)
    return FunctionPartyConfig(
        registry=registry,
        listen_address=config.listen_address,
        port=0,
        timeout=config.timeout,
        kernel=config.kernel,
        c_grid=config.c_grid,
        degree_grid=config.degree_grid,
        sigma_grid=config.sigma_grid,
        averaging=config.averaging,
        fold_seed=config.fold_seed,
        **extra,
    )


def run_session(
    parts: Sequence[DataMatrix],
    config: ExperimentConfig,
    update_batches: Optional[Sequence[Sequence[DataMatrix]]] = None,
    suite: Optional[CryptoSuite] = None,
    **function_options,
) -> Tuple[FunctionPartyResult, List[InputPartyResult]]:
    """
    One protocol session with every party on its own thread of this process.

    ``update_batches[i]`` lists party ``i``'s batches after the initial one.
    """
    if len(parts) != config.parties:
        raise ConfigError(f"{len(parts)} data shares for {config.parties} parties")
    party_ids = config.party_ids
    keys = [generate_party_keys(party_id, suite) for party_id in party_ids]
    registry = build_registry(keys, function_port=0)
    seed, private_seeds = config.seeds()
    rounds = len(update_batches[0]) if update_batches else 0
    function_config = _function_config(registry, config, update_rounds=rounds, **function_options)

    with FunctionParty(function_config) as function_party:
        port = function_party.bind()
        with ThreadPoolExecutor(max_workers=len(parts) + 1) as pool:
            served = pool.submit(function_party.serve)
            inputs = [
                pool.submit(
                    run_input_party,
                    InputPartyConfig(
                        party_id=party_id,
                        registry=registry,
                        keys=party_keys,
                        data=part,
                        private_seed=private_seed,
                        seed=seed,
                        k=config.k,
                        update_batches=update_batches[index] if update_batches else (),
                        function_address=(function_config.listen_address, port),
                        chunk_rows=config.chunk_rows,
                        timeout=config.timeout,
                        suite=suite,
                    ),
                )
                for index, (party_id, party_keys, part, private_seed) in enumerate(
                    zip(party_ids, keys, parts, private_seeds)
                )
            ]
            done, _ = wait([served, *inputs], return_when=FIRST_EXCEPTION)
            for future in done:
                if future.exception() is not None:
                    function_party.close()
                    raise future.exception()
            return served.result(), [future.result() for future in inputs]


class _Spawned:
    def __init__(self, role: str, name: str, session_file: Path):
        self.role = role
        self.name = name
        env = {**os.environ, **SINGLE_THREAD_ENV}
        command = [sys.executable, "-m", "conda_flake.party_subprocess", role, str(session_file)]
        logger.info("spawning %s party %s", role, name)
        try:
            self.process = subprocess.Popen(
                command, env=env, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True
            )
        except OSError as exc:
            raise SpawnError(f"could not start {role} party {name}: {exc}")

    def finish(self) -> None:
        _, stderr = self.process.communicate()
        if self.process.returncode != 0:
            tail = "\n".join(stderr.strip().splitlines()[-10:])
            raise SpawnError(
                f"{self.role} party {self.name} exited with code "
                f"{self.process.returncode}:\n{tail}"
            )

    def kill(self) -> None:
        if self.process.poll() is None:
            self.process.kill()
            self.process.communicate()


def _wait_ready(spawned: _Spawned, ready_file: Path, timeout: float) -> int:
    deadline = time.monotonic() + timeout
    while not ready_file.exists():
        if spawned.process.poll() is not None:
            spawned.finish()
            raise SpawnError("function party exited before it started listening")
        if time.monotonic() > deadline:
            raise SpawnError(f"function party did not start listening within {timeout}s")
        time.sleep(READY_POLL_S)
    return int(ready_file.read_text())


def _write_session(path: Path, session: dict) -> Path:
    path.write_text(json.dumps(session, indent=2))
    return path


def spawn_session(
    parts: Sequence[DataMatrix], config: ExperimentConfig, workdir: Path
) -> Tuple[dict, List[dict], np.ndarray]:
    """
    One protocol session with the function party and every input party in
    separate processes talking TCP over loopback.
    """
    workdir = Path(workdir)
    party_ids = config.party_ids
    registry_path, key_files, authority = provision(party_ids, workdir / "keys", function_port=0)
    seed, private_seeds = config.seeds()
    output_dir = config.export_dir or workdir / "function"
    ready_file = workdir / "function.port"
    function_session = {
        "registry": str(registry_path),
        "authority_key": authority.hex(),
        "listen_address": config.listen_address,
        "port": 0,
        "ready_file": str(ready_file),
        "timeout": config.timeout,
        "kernel": config.kernel.to_dict(),
        "c_grid": list(config.c_grid),
        "degree_grid": list(config.degree_grid),
        "sigma_grid": list(config.sigma_grid) if config.sigma_grid else None,
        "averaging": config.averaging,
        "fold_seed": config.fold_seed,
        "output_dir": str(output_dir),
        "export_csv": config.export_dir is not None,
        "store_dir": str(config.store_dir or workdir / "payloads"),
        "result": str(workdir / "function.result.json"),
        "verbose": config.verbose,
    }
    spawned: List[_Spawned] = []
    try:
        function = _Spawned(
            "function", "function", _write_session(workdir / "function.json", function_session)
        )
        spawned.append(function)
        port = _wait_ready(function, ready_file, config.timeout)
        for party_id, part, private_seed in zip(party_ids, parts, private_seeds):
            session = {
                "party_id": party_id,
                "registry": str(registry_path),
                "authority_key": authority.hex(),
                "keys": str(key_files[party_id]),
                "data": str(write_csv(part, workdir / f"{party_id}.csv")),
                "private_seed": private_seed,
                "seed": seed,
                "k": config.k,
                "function_address": [config.listen_address, port],
                "chunk_rows": config.chunk_rows,
                "timeout": config.timeout,
                "result": str(workdir / f"{party_id}.result.json"),
                "verbose": config.verbose,
            }
            spawned.append(
                _Spawned("input", party_id, _write_session(workdir / f"{party_id}.json", session))
            )
        for process in reversed(spawned):
            process.finish()
    finally:
        for process in spawned:
            process.kill()

    summary = json.loads((workdir / "function.result.json").read_text())
    inputs = [
        json.loads((workdir / f"{party_id}.result.json").read_text()) for party_id in party_ids
    ]
    return summary, inputs, read_matrix_file(output_dir / "gram.flk")


def run_federated(
    parts: Sequence[DataMatrix], config: ExperimentConfig
) -> Tuple[CvReport, TimingRun, np.ndarray]:
    if config.isolation == "thread":
        result, inputs = run_session(parts, config)
        first = inputs[0]
        timing = TimingRun(
            masking_s=first.masking_s[0],
            gram_s=result.gram_s,
            training_s=result.training_s,
            comm_estimate_s=vpn_comm_estimate(first.bytes_sent),
        )
        return result.cv_report, timing, result.gram.values

    with tempfile.TemporaryDirectory(prefix="conda-flake-") as workdir:
        summary, inputs, gram = spawn_session(parts, config, Path(workdir))
    first = inputs[0]
    timing = TimingRun(
        masking_s=first["masking_s"][0],
        gram_s=summary["gram_s"],
        training_s=summary["training_s"],
        comm_estimate_s=vpn_comm_estimate(first["bytes_sent"]),
    )
    return CvReport.from_dict(summary["cv_report"]), timing, gram


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    config.validate()
    _, parts = _experiment_data(config)
    result = ExperimentResult(config=config)
    size = config.parties * config.samples_per_party
    naive_gram = federated_gram = None

    if config.mode in ("naive", "both"):
        with threadpool_limits(limits=1):
            result.naive, timing, naive_gram = run_naive(parts, config)
        result.timings["naive"] = TimingReport("naive", size, [timing])
        logger.info("naive mean AUC %.6f", result.naive.mean_auc)

    if config.mode in ("federated", "both"):
        result.federated, timing, federated_gram = run_federated(parts, config)
        result.timings["federated"] = TimingReport("federated", size, [timing])
        logger.info("federated mean AUC %.6f", result.federated.mean_auc)

    if naive_gram is not None and federated_gram is not None:
        result.gram_error = relative_frobenius(federated_gram, naive_gram)
        logger.info(
            "Gram relative error %.3g, AUC difference %.3g",
            result.gram_error,
            result.auc_difference,
        )

    if config.output is not None:
        emit_report(result.reports(), config.output)
    return result


def run_scaling_benchmark(
    sizes: Sequence[int] = DEFAULT_SCALING_SIZES,
    repeats: int = 10,
    parties: int = 3,
    features: int = 20,
    classes: int = 4,
    k: Optional[int] = None,
    seed: int = 0,
    kernel: Optional[KernelSpec] = None,
    c_grid: Sequence[float] = DEFAULT_C_GRID,
    degree_grid: Sequence[int] = DEFAULT_DEGREE_GRID,
    chunk_rows: int = DEFAULT_CHUNK_ROWS,
) -> List[TimingReport]:
    """
    Per total size, time masking of one input party's share (context build
    excluded), Gram computation over every party's masked share, and the full
    cross-validated grid search, ``repeats`` times each.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ConfigError(f"sizes must be ascending, got {sizes}")
    if repeats < 1:
        raise ConfigError(f"repeats must be at least 1, got {repeats}")
    kernel = kernel or KernelSpec("polynomial", gamma=SCALE)
    dims = MaskDims.for_features(features, k)
    reports = []
    with threadpool_limits(limits=1):
        for size in sizes:
            report = TimingReport("scaling", size)
            for repeat in range(repeats):
                state = np.random.SeedSequence([seed, size, repeat]).generate_state(parties + 1)
                data = gen_synthetic(size, features, classes, int(state[0]))
                shares = partition(data, parties)
                contexts = [
                    build_mask_context(int(state[0]), dims, f"party{i}", int(state[i]))
                    for i in range(1, parties + 1)
                ]
                with Stopwatch() as masking:
                    first = mask(shares[0], contexts[0])
                masked = [first] + [mask(s, c) for s, c in zip(shares[1:], contexts[1:])]
                with Stopwatch() as gram_timer:
                    gram = compute_gram(masked)
                grid_times: Dict[Tuple[float, float], float] = {}
                with Stopwatch() as training:
                    cross_validate_grid(
                        gram,
                        data.labels,
                        c_grid,
                        degree_grid,
                        kernel=kernel,
                        seed=seed,
                        timings=grid_times,
                    )
                slowest = max(grid_times, key=grid_times.get)
                logger.debug(
                    "size %d: slowest grid point C=%g param=%g took %.4fs",
                    size,
                    *slowest,
                    grid_times[slowest],
                )
                report.runs.append(
                    TimingRun(
                        masking_s=masking.elapsed,
                        gram_s=gram_timer.elapsed,
                        training_s=training.elapsed,
                        comm_estimate_s=vpn_comm_estimate(wire_size(first, chunk_rows)),
                    )
                )
            logger.info(
                "size %d: masking %.4fs, gram %.4fs, training %.4fs",
                size,
                report.mean("masking_s"),
                report.mean("gram_s"),
                report.mean("training_s"),
            )
            reports.append(report)
    return reports


def run_update_iterations(
    start_n: int,
    increment: int,
    rounds: int,
    parties: int = 3,
    features: int = 20,
    classes: int = 2,
    k: Optional[int] = None,
    seed: int = 0,
    repeats: int = 1,
    tolerance: float = UPDATE_TOLERANCE,
    membership: bool = True,
) -> TimingReport:
    """
    ``rounds`` iterations counting the initial one: every party starts with
    ``start_n`` samples and gains ``increment`` per later round. Only the new
    rows are masked; the Gram matrix is extended and then checked against a
    from-scratch recomputation over every stored payload.

    With ``membership`` two more rounds follow: a new party joins with
    ``start_n`` samples, then ``party1`` leaves and its payloads are erased.
    Both are checked against a recomputation the same way.
    """
    if rounds < 2:
        raise ConfigError(f"rounds must be at least 2, got {rounds}")
    if start_n < 1 or increment < 1:
        raise ConfigError("start_n and increment must be positive")
    dims = MaskDims.for_features(features, k)
    per_party = start_n + increment * (rounds - 1)
    report = TimingReport("updates", parties * per_party)
    with threadpool_limits(limits=1):
        for repeat in range(repeats):
            state = np.random.SeedSequence([seed, repeat]).generate_state(parties + 2)
            shares = partition(
                gen_synthetic(parties * per_party, features, classes, int(state[0])), parties
            )
            contexts = [
                build_mask_context(int(state[0]), dims, f"party{i}", int(state[i]))
                for i in range(1, parties + 1)
            ]
            store = PayloadStore()
            with Stopwatch() as masking:
                first = mask(shares[0].rows(0, start_n), contexts[0])
            masked = [first] + [
                mask(share.rows(0, start_n), ctx) for share, ctx in zip(shares[1:], contexts[1:])
            ]
            with Stopwatch() as gram_timer:
                gram = compute_gram(masked)
            for payload in masked:
                store.add(payload)
            run = TimingRun(masking_s=masking.elapsed, gram_s=gram_timer.elapsed)

            for iteration in range(1, rounds):
                lo = start_n + increment * (iteration - 1)
                contexts = [advance_iteration(ctx) for ctx in contexts]
                with Stopwatch() as masking:
                    batch = mask(shares[0].rows(lo, lo + increment), contexts[0])
                batches = [batch] + [
                    mask(share.rows(lo, lo + increment), ctx)
                    for share, ctx in zip(shares[1:], contexts[1:])
                ]
                with Stopwatch() as gram_timer:
                    for payload in batches:
                        gram = extend_with_data(gram, payload, store)
                _check_recomputed(gram, store, f"round {iteration}", tolerance)
                run.updates.append(
                    UpdateTiming(masking.elapsed, gram_timer.elapsed, batch.sample_count)
                )
                logger.info(
                    "round %d: masked %d rows in %.4fs, extended Gram to %d in %.4fs",
                    iteration,
                    batch.sample_count,
                    masking.elapsed,
                    gram.size,
                    gram_timer.elapsed,
                )

            if membership:
                newcomer = f"party{parties + 1}"
                joining = gen_synthetic(start_n, features, classes, int(state[parties + 1]))
                context = build_mask_context(
                    int(state[0]), dims, newcomer, int(state[parties + 1])
                )
                with Stopwatch() as masking:
                    batch = mask(joining, context)
                with Stopwatch() as gram_timer:
                    gram = add_party(gram, batch, store)
                _check_recomputed(gram, store, f"join of {newcomer}", tolerance)
                run.updates.append(
                    UpdateTiming(masking.elapsed, gram_timer.elapsed, batch.sample_count, "join")
                )

                leaving = len(gram.party_indices("party1"))
                with Stopwatch() as gram_timer:
                    gram = remove_party(gram, "party1", store)
                if "party1" in store:
                    raise UpdateMismatchError("payloads of party1 survived its removal")
                _check_recomputed(gram, store, "leave of party1", tolerance)
                run.updates.append(UpdateTiming(0.0, gram_timer.elapsed, -leaving, "leave"))
                logger.info(
                    "%s joined with %d rows, party1 left with %d rows; Gram size %d",
                    newcomer,
                    batch.sample_count,
                    leaving,
                    gram.size,
                )
            report.runs.append(run)
    return report


def _check_recomputed(
    gram: GramMatrix, store: PayloadStore, step: str, tolerance: float
) -> None:
    recomputed = recompute_gram(store, gram.segments)
    error = relative_frobenius(gram.values, recomputed.values)
    if error > tolerance:
        raise UpdateMismatchError(
            f"{step}: updated Gram deviates from recomputation "
            f"by {error:.3g} (tolerance {tolerance:g})"
        )
