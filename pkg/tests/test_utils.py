"""Tests for the utils module."""

from __future__ import annotations

import numpy as np
import pytest
from pytest_mock import MockerFixture

from conda_flake import utils
from conda_flake.utils import Stopwatch, default_data_dir, mean_std, relative_frobenius


def test_default_data_dir_is_per_user(mocker: MockerFixture, tmp_path):
    user_data_dir = mocker.patch.object(utils, "user_data_dir", return_value=str(tmp_path))
    assert default_data_dir() == tmp_path
    user_data_dir.assert_called_once_with("conda-flake")


@pytest.mark.parametrize(
    "actual,expected,error",
    [
        pytest.param([[1.0, 0.0]], [[1.0, 0.0]], 0.0, id="equal"),
        pytest.param([[3.0, 4.0]], [[0.0, 0.0]], 5.0, id="zero reference"),
        pytest.param([[2.0, 0.0]], [[1.0, 0.0]], 1.0, id="doubled"),
        pytest.param([[1.0]], [[1.0, 1.0]], float("inf"), id="shape mismatch"),
    ],
)
def test_relative_frobenius(actual, expected, error):
    assert relative_frobenius(np.array(actual), np.array(expected)) == error


def test_mean_std():
    assert mean_std([1.0, 3.0]) == (2.0, 1.0)
    assert mean_std(x for x in [5.0]) == (5.0, 0.0)
    assert mean_std([]) == (0.0, 0.0)


def test_stopwatch(mocker: MockerFixture):
    mocker.patch.object(utils.time, "perf_counter", side_effect=[10.0, 12.5])
    debug = mocker.patch.object(utils.logger, "debug")
    with Stopwatch("masking") as timer:
        pass
    assert timer.elapsed == 2.5
    debug.assert_called_once()


def test_stopwatch_records_on_error():
    with pytest.raises(RuntimeError):
        with Stopwatch() as timer:
            raise RuntimeError
    assert timer.elapsed >= 0.0
