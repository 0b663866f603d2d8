"""Tests for the metrics module."""

import numpy as np
import pytest

from conda_flake.exceptions import DegenerateLabelsError, DimensionMismatchError
from conda_flake.metrics import binary_auc, roc_auc


def pairwise_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    pos, neg = scores[positive], scores[~positive]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def test_perfect_ranking():
    assert binary_auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])) == 1.0
    assert binary_auc(np.array([0.9, 0.8, 0.2, 0.1]), np.array([0, 0, 1, 1])) == 0.0


def test_all_ties():
    assert binary_auc(np.zeros(6), np.array([0, 1, 0, 1, 1, 0])) == 0.5


def test_matches_pairwise_count(rng: np.random.Generator):
    for _ in range(100):
        n = int(rng.integers(2, 40))
        positive = rng.random(n) < 0.5
        positive[0], positive[1] = True, False
        # coarse scores so that ties are common
        scores = rng.integers(0, 6, n).astype(float)
        assert binary_auc(scores, positive) == pytest.approx(
            pairwise_auc(scores, positive), abs=1e-12
        )


def test_degenerate_labels():
    with pytest.raises(DegenerateLabelsError):
        binary_auc(np.array([0.3, 0.4]), np.array([1, 1]))


def test_binary_roc_auc_uses_larger_label():
    scores = np.array([0.1, 0.2, 0.8, 0.9])
    assert roc_auc(scores, np.array([3, 3, 8, 8])) == 1.0
    assert roc_auc(scores, np.array([3, 3, 8, 8]), classes=[8, 3]) == 0.0


def test_macro_and_micro_averaging():
    labels = np.array([0, 1, 2, 0, 1, 2])
    scores = np.array(
        [
            [0.9, 0.05, 0.05],
            [0.1, 0.8, 0.1],
            [0.2, 0.3, 0.5],
            [0.6, 0.3, 0.1],
            [0.5, 0.4, 0.1],
            [0.1, 0.1, 0.8],
        ]
    )
    onehot = labels[:, None] == np.arange(3)[None, :]
    macro = np.mean([pairwise_auc(scores[:, c], onehot[:, c]) for c in range(3)])
    micro = pairwise_auc(scores.ravel(), onehot.ravel())
    assert roc_auc(scores, labels, "macro") == pytest.approx(macro)
    assert roc_auc(scores, labels, "micro") == pytest.approx(micro)


def test_bad_averaging():
    with pytest.raises(ValueError):
        roc_auc(np.zeros(2), np.array([0, 1]), averaging="weighted")


def test_shape_checks():
    with pytest.raises(DimensionMismatchError):
        roc_auc(np.zeros(3), np.array([0, 1]))
    with pytest.raises(DimensionMismatchError):
        roc_auc(np.zeros((3, 2)), np.array([0, 1, 2]))
    with pytest.raises(DegenerateLabelsError):
        roc_auc(np.zeros(3), np.array([0, 1, 2]))
