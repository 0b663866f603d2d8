from typing import List

import numpy as np
import pytest

from conda_flake.data import DataMatrix
from conda_flake.experiments import ExperimentConfig
from conda_flake.kernels import SCALE, KernelSpec
from conda_flake.linalg import MaskDims
from conda_flake.masking import MaskContext, build_mask_context
from tests import SHARED_SEED, SMALL_C_GRID, SMALL_DEGREE_GRID, FakeSuite

pytest_plugins = (
    # Add testing fixtures and internal pytest plugins here
    "conda.testing",
    "conda.testing.fixtures",
)


@pytest.fixture(autouse=True)
def do_not_register_envs(monkeypatch):
    """Do not register environments created during tests"""
    monkeypatch.setenv("CONDA_REGISTER_ENVS", "false")


@pytest.fixture(autouse=True)
def do_not_notify_outdated_conda(monkeypatch):
    """Do not notify about outdated conda during tests"""
    monkeypatch.setenv("CONDA_NOTIFY_OUTDATED_CONDA", "false")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def fake_suite() -> FakeSuite:
    return FakeSuite()


@pytest.fixture
def mask_dims() -> MaskDims:
    return MaskDims(f=5, k=9)


@pytest.fixture
def party_contexts(mask_dims: MaskDims) -> List[MaskContext]:
    """Three parties sharing one mask seed, each with its own private seed."""
    return [
        build_mask_context(SHARED_SEED, mask_dims, f"party{i}", 1000 + i) for i in range(1, 4)
    ]


@pytest.fixture
def party_data(rng: np.random.Generator, mask_dims: MaskDims) -> List[DataMatrix]:
    """Unlabeled shares of 4, 3 and 2 samples."""
    return [DataMatrix(rng.standard_normal((n, mask_dims.f))) for n in (4, 3, 2)]


@pytest.fixture
def small_config() -> ExperimentConfig:
    """Desk-scale experiment that runs in seconds on one thread."""
    return ExperimentConfig(
        parties=3,
        samples_per_party=20,
        features=4,
        classes=2,
        kernel=KernelSpec("polynomial", v=1.0, gamma=SCALE),
        c_grid=SMALL_C_GRID,
        degree_grid=SMALL_DEGREE_GRID,
        seed=7,
        separation=1.5,
        isolation="thread",
        timeout=20.0,
    )
