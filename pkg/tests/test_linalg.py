"""Tests for the linalg module."""

import numpy as np
import pytest
from pytest_mock import MockerFixture

from conda_flake import linalg
from conda_flake.exceptions import NumericFailure, RankDeficientError
from conda_flake.linalg import (
    CounterRng,
    MaskDims,
    pseudo_inverse,
    random_full_rank,
    random_orthogonal,
    svd,
    sym_sqrt,
)


def jacobi_singular_values(m: np.ndarray, sweeps: int = 100) -> np.ndarray:
    """One-sided Jacobi SVD: rotate column pairs until all are orthogonal."""
    a = np.array(m, dtype=np.float64)
    cols = a.shape[1]
    for _ in range(sweeps):
        rotated = False
        for i in range(cols - 1):
            for j in range(i + 1, cols):
                alpha = a[:, i] @ a[:, i]
                beta = a[:, j] @ a[:, j]
                gamma = a[:, i] @ a[:, j]
                if abs(gamma) <= 1e-15 * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = 1.0 if zeta == 0 else np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta**2))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                column_i = a[:, i].copy()
                a[:, i] = c * column_i - s * a[:, j]
                a[:, j] = s * column_i + c * a[:, j]
        if not rotated:
            break
    return np.sort(np.linalg.norm(a, axis=0))[::-1]


def test_svd_identity():
    result = svd(np.eye(3))
    np.testing.assert_allclose(result.s, [1.0, 1.0, 1.0])


def test_svd_diagonal():
    result = svd(np.diag([3.0, 0.0]))
    np.testing.assert_allclose(result.s, [3.0, 0.0], atol=1e-12)


def test_svd_matches_jacobi(rng: np.random.Generator):
    m = rng.standard_normal((5, 3))
    result = svd(m)
    np.testing.assert_allclose(result.s, jacobi_singular_values(m), rtol=0, atol=1e-10)
    assert np.all(np.diff(result.s) <= 0)
    error = np.linalg.norm(result.reconstruct() - m) / np.linalg.norm(m)
    assert error <= 1e-10


@pytest.mark.parametrize(
    "bad",
    [
        pytest.param(np.array([[1.0, np.nan]]), id="nan"),
        pytest.param(np.array([[np.inf, 1.0]]), id="inf"),
        pytest.param(np.empty((0, 2)), id="empty"),
        pytest.param(np.ones(3), id="1-d"),
    ],
)
def test_svd_rejects_invalid_matrices(bad: np.ndarray):
    with pytest.raises(NumericFailure):
        svd(bad)


def test_mask_dims():
    assert MaskDims.for_features(20) == MaskDims(f=20, k=40)
    assert MaskDims.for_features(3, k=4).k == 4
    with pytest.raises(NumericFailure):
        MaskDims(f=3, k=3)
    with pytest.raises(NumericFailure):
        MaskDims(f=0, k=2)


def test_counter_rng_is_reproducible():
    first = CounterRng(42, 3).normals(101)
    second = CounterRng(42, 3).normals(101)
    assert first.shape == (101,)
    assert np.array_equal(first, second)
    assert not np.array_equal(first, CounterRng(42, 4).normals(101))


def test_counter_rng_distribution():
    uniforms = CounterRng(7).uniforms(10_000)
    assert uniforms.min() >= 0.0
    assert uniforms.max() < 1.0
    normals = CounterRng(7).normals(20_000)
    assert abs(normals.mean()) < 0.05
    assert abs(normals.std() - 1.0) < 0.05


def test_random_full_rank_is_deterministic():
    dims = MaskDims(f=3, k=6)
    assert np.array_equal(random_full_rank(99, dims), random_full_rank(99, dims))


def test_random_full_rank_has_full_rank():
    n_mask = random_full_rank(1, MaskDims(f=2, k=4))
    assert n_mask.shape == (4, 2)
    assert np.linalg.matrix_rank(n_mask) == 2


def test_random_full_rank_depends_on_seed():
    dims = MaskDims(f=2, k=4)
    assert not np.array_equal(random_full_rank(1, dims), random_full_rank(2, dims))


def test_random_full_rank_redraws(mocker: MockerFixture):
    dims = MaskDims(f=2, k=4)
    mocker.patch.object(linalg, "_full_rank", side_effect=[False, True])
    n_mask = random_full_rank(5, dims)
    expected = CounterRng(5, 1).normals(8).reshape(4, 2)
    assert np.array_equal(n_mask, expected)


def test_random_full_rank_gives_up(mocker: MockerFixture):
    mocker.patch.object(linalg, "_full_rank", return_value=False)
    with pytest.raises(RankDeficientError):
        random_full_rank(5, MaskDims(f=2, k=4))


@pytest.mark.parametrize(
    "n,expected",
    [
        pytest.param([[2.0], [0.0]], [[0.5, 0.0]], id="single column"),
        pytest.param(
            [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            id="orthonormal columns",
        ),
    ],
)
def test_pseudo_inverse_examples(n, expected):
    np.testing.assert_allclose(pseudo_inverse(np.array(n)), expected, atol=1e-12)


def test_pseudo_inverse_matches_normal_equations(rng: np.random.Generator):
    n = rng.standard_normal((6, 3))
    l0 = pseudo_inverse(n)
    np.testing.assert_allclose(l0 @ n, np.eye(3), rtol=0, atol=1e-10)
    oracle = np.linalg.solve(n.T @ n, n.T)
    np.testing.assert_allclose(l0, oracle, rtol=0, atol=1e-10)


def test_pseudo_inverse_rejects_rank_deficient():
    with pytest.raises(RankDeficientError):
        pseudo_inverse(np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]]))


def test_sym_sqrt_rank_one():
    root = sym_sqrt(np.array([[2.0], [0.0]]))
    np.testing.assert_allclose(root @ root, [[4.0, 0.0], [0.0, 0.0]], atol=1e-12)


def test_sym_sqrt_orthonormal_columns_is_projector():
    n = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(sym_sqrt(n), n @ n.T, atol=1e-12)


def test_sym_sqrt_squares_to_outer_product(rng: np.random.Generator):
    n = rng.standard_normal((6, 3))
    root = sym_sqrt(n)
    assert np.max(np.abs(root - root.T)) <= 1e-12
    outer = n @ n.T
    assert np.linalg.norm(root @ root - outer) / np.linalg.norm(outer) <= 1e-8
    assert np.linalg.eigvalsh(root).min() >= -1e-10


def test_random_orthogonal_one_dimensional():
    o = random_orthogonal(3, 1)
    assert o.shape == (1, 1)
    assert abs(o[0, 0]) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2**63 + 5])
def test_random_orthogonal(seed: int):
    o = random_orthogonal(seed, 4)
    np.testing.assert_allclose(o.T @ o, np.eye(4), rtol=0, atol=1e-10)
    assert abs(np.linalg.det(o)) == pytest.approx(1.0, abs=1e-10)
    assert np.array_equal(o, random_orthogonal(seed, 4))
