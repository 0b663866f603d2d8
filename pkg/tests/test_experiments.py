"""Tests for the experiments module."""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from pytest_mock import MockerFixture

from conda_flake import experiments
from conda_flake.data import DataMatrix
from conda_flake.exceptions import ConfigError, UpdateMismatchError
from conda_flake.experiments import (
    ExperimentConfig,
    run_experiment,
    run_scaling_benchmark,
    run_session,
    run_update_iterations,
    vpn_comm_estimate,
)
from conda_flake.gram import GramMatrix
from conda_flake.kernels import KernelSpec
from conda_flake.reports import read_report
from tests import SMALL_C_GRID, SMALL_DEGREE_GRID


@pytest.mark.parametrize(
    "changes",
    [
        pytest.param({"mode": "sideways"}, id="mode"),
        pytest.param({"isolation": "vm"}, id="isolation"),
        pytest.param({"averaging": "weighted"}, id="averaging"),
        pytest.param({"parties": 1}, id="one federated party"),
        pytest.param({"classes": 1}, id="one class"),
        pytest.param({"samples_per_party": 9}, id="too few samples to stratify"),
        pytest.param({"features": 0}, id="no features"),
        pytest.param({"k": 4}, id="k not above f"),
        pytest.param({"c_grid": ()}, id="empty grid"),
    ],
)
def test_config_validation(small_config: ExperimentConfig, changes: dict):
    with pytest.raises(ConfigError):
        replace(small_config, **changes).validate()


def test_naive_single_party_is_valid(small_config: ExperimentConfig):
    assert replace(small_config, parties=1, mode="naive").validate().parties == 1


def test_seeds_are_derived(small_config: ExperimentConfig):
    seed, private = small_config.seeds()
    assert len(private) == small_config.parties
    assert len({seed, *private}) == small_config.parties + 1
    assert small_config.seeds() == (seed, private)
    assert replace(small_config, seed=8).seeds()[0] != seed
    assert small_config.party_ids == ["party1", "party2", "party3"]


def test_config_from_dict_layers_on_base(small_config: ExperimentConfig, tmp_path: Path):
    path = tmp_path / "experiment.json"
    path.write_text(
        json.dumps({"seed": 11, "kernel": {"kind": "rbf", "sigma": 2.0}, "c_grid": [1, 2]})
    )
    config = ExperimentConfig.from_file(path, base=small_config)
    assert config.seed == 11
    assert config.kernel == KernelSpec("rbf", sigma=2.0)
    assert config.c_grid == (1, 2)
    assert config.timeout == small_config.timeout
    assert ExperimentConfig.from_dict(small_config.to_dict()) == small_config


def test_config_rejects_unknown_settings(tmp_path: Path):
    with pytest.raises(ConfigError, match="colour"):
        ExperimentConfig.from_dict({"colour": "blue"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "missing.json")


def test_updated_skips_none(small_config: ExperimentConfig):
    config = small_config.updated(seed=None, parties=4)
    assert config.seed == small_config.seed
    assert config.parties == 4


def test_naive_mode_makes_no_network_calls(small_config: ExperimentConfig, mocker: MockerFixture):
    run_session = mocker.patch.object(experiments, "run_session")
    spawn_session = mocker.patch.object(experiments, "spawn_session")
    result = run_experiment(replace(small_config, mode="naive"))
    run_session.assert_not_called()
    spawn_session.assert_not_called()
    assert result.federated is None
    assert result.auc_difference is None
    assert 0.0 <= result.naive.mean_auc <= 1.0
    assert set(result.timings) == {"naive"}


def test_federated_matches_naive(small_config: ExperimentConfig, tmp_path: Path):
    config = replace(small_config, output=tmp_path / "report.csv")
    result = run_experiment(config)
    assert result.gram_error <= 1e-8
    assert result.auc_difference <= 1e-6
    assert result.max_fold_difference <= 1e-6
    assert result.federated.best_c == result.naive.best_c
    assert result.federated.best_param == result.naive.best_param
    assert len(read_report(config.output)) == 4


@pytest.mark.slow
def test_federated_in_processes(small_config: ExperimentConfig):
    result = run_experiment(replace(small_config, isolation="process", timeout=60.0))
    assert result.gram_error <= 1e-8
    assert result.auc_difference <= 1e-6


@pytest.mark.slow
def test_parity_at_desk_scale():
    config = ExperimentConfig(
        parties=3, samples_per_party=300, isolation="thread", timeout=120.0
    ).validate()
    assert len(config.c_grid) * len(config.degree_grid) == 75
    result = run_experiment(config)
    assert result.gram_error <= 1e-8
    assert result.auc_difference <= 1e-6
    assert result.max_fold_difference <= 1e-6


def test_gram_is_exact_across_configurations(fake_suite):
    rng = np.random.default_rng(50)
    for trial in range(50):
        parties = int(rng.integers(2, 6))
        features = int(rng.choice([1, 2, 5, 20]))
        config = ExperimentConfig(
            parties=parties,
            features=features,
            k=int(rng.choice([features + 1, 2 * features])),
            seed=trial,
            timeout=20.0,
        )
        shares = [
            DataMatrix(rng.standard_normal((int(rng.choice([1, 10, 100, 300])), features)))
            for _ in range(parties)
        ]
        result, _ = run_session(shares, config, suite=fake_suite)
        plain = np.vstack([share.values for share in shares])
        expected = plain @ plain.T
        error = np.linalg.norm(result.gram.values - expected) / np.linalg.norm(expected)
        assert error <= 1e-8, f"trial {trial}"


def test_vpn_comm_estimate():
    assert vpn_comm_estimate(1_310_000) == pytest.approx(1.150, abs=1e-3)


def test_update_iterations():
    report = run_update_iterations(
        start_n=10, increment=4, rounds=3, parties=3, features=5, repeats=2
    )
    assert report.size == 3 * 18
    assert report.repeats == 2
    stats = report.update_stats()
    assert [item["round"] for item in stats] == [1, 2, 3, 4]
    assert [item["kind"] for item in stats] == ["update", "update", "join", "leave"]
    assert [item["rows"] for item in stats] == [4, 4, 10, -18]


def test_update_iterations_without_membership():
    report = run_update_iterations(
        start_n=5, increment=2, rounds=2, features=3, membership=False
    )
    assert [item["kind"] for item in report.update_stats()] == ["update"]


def test_update_iterations_checks_join(mocker: MockerFixture):
    real = experiments.recompute_gram

    def drift_after_join(store, segments):
        gram = real(store, segments)
        if any(segment.party_id == "party4" for segment in segments):
            return GramMatrix(gram.segments, gram.values * (1 + 1e-6))
        return gram

    mocker.patch.object(experiments, "recompute_gram", side_effect=drift_after_join)
    with pytest.raises(UpdateMismatchError, match="join of party4"):
        run_update_iterations(start_n=5, increment=2, rounds=2, features=3)


def test_update_iterations_checks_leave(mocker: MockerFixture):
    real_remove = experiments.remove_party

    def keep_payloads(gram, party_id, store=None):
        return real_remove(gram, party_id)

    mocker.patch.object(experiments, "remove_party", side_effect=keep_payloads)
    with pytest.raises(UpdateMismatchError, match="party1 survived"):
        run_update_iterations(start_n=5, increment=2, rounds=2, features=3)


def test_update_iterations_detects_drift(mocker: MockerFixture):
    real = experiments.recompute_gram

    def drifted(store, segments):
        gram = real(store, segments)
        return GramMatrix(gram.segments, gram.values * (1 + 1e-6))

    mocker.patch.object(experiments, "recompute_gram", side_effect=drifted)
    with pytest.raises(UpdateMismatchError):
        run_update_iterations(start_n=5, increment=2, rounds=2, features=3)


@pytest.mark.parametrize(
    "kwargs",
    [
        pytest.param({"rounds": 1}, id="one round"),
        pytest.param({"increment": 0}, id="no increment"),
    ],
)
def test_update_iterations_rejects(kwargs):
    with pytest.raises(ConfigError):
        run_update_iterations(**{"start_n": 5, "increment": 2, "rounds": 3, **kwargs})


def test_scaling_benchmark():
    reports = run_scaling_benchmark(
        sizes=(30, 60),
        repeats=2,
        features=4,
        classes=2,
        c_grid=SMALL_C_GRID,
        degree_grid=SMALL_DEGREE_GRID,
    )
    assert [report.size for report in reports] == [30, 60]
    assert all(report.repeats == 2 for report in reports)
    assert all(report.mean("comm_estimate_s") > 0.1 for report in reports)


@pytest.mark.parametrize(
    "kwargs",
    [
        pytest.param({"sizes": (60, 30)}, id="descending"),
        pytest.param({"repeats": 0}, id="no repeats"),
    ],
)
def test_scaling_benchmark_rejects(kwargs):
    with pytest.raises(ConfigError):
        run_scaling_benchmark(**{"sizes": (30,), **kwargs})
