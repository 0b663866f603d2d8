"""
ROC AUC from the rank statistic, with one-vs-rest macro/micro averaging.
"""

from __future__ import annotations

from typing import Literal, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from conda_flake.exceptions import DegenerateLabelsError, DimensionMismatchError

Averaging = Literal["macro", "micro"]
AVERAGING = ("macro", "micro")


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUC; tied scores share their mean rank."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    positive = np.asarray(positive, dtype=bool).reshape(-1)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUC needs at least one positive and one negative sample")
    ranks = rankdata(scores, method="average")
    u_statistic = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def roc_auc(
    scores: np.ndarray,
    labels: np.ndarray,
    averaging: Averaging = "macro",
    classes: Optional[Sequence[int]] = None,
) -> float:
    """
    Binary input is a score vector; for the positive class ``classes[1]``
    (default: the larger label). Multiclass input is an ``(n, classes)``
    score matrix scored one-vs-rest: ``macro`` averages per-class AUCs,
    ``micro`` pools every (sample, class) decision into one binary problem.
    """
    if averaging not in AVERAGING:
        raise ValueError(f"averaging must be one of {AVERAGING}, got {averaging!r}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if classes is None:
        classes = np.unique(labels)
    classes = list(classes)

    if scores.ndim == 1:
        if len(scores) != len(labels):
            raise DimensionMismatchError(f"{len(scores)} scores for {len(labels)} labels")
        if len(classes) != 2:
            raise DegenerateLabelsError(f"binary AUC needs two classes, got {classes}")
        return binary_auc(scores, labels == classes[1])

    if scores.shape != (len(labels), len(classes)):
        raise DimensionMismatchError(
            f"score matrix of shape {scores.shape} for {len(labels)} labels and "
            f"{len(classes)} classes"
        )
    onehot = labels[:, None] == np.asarray(classes)[None, :]
    if averaging == "micro":
        return binary_auc(scores.ravel(), onehot.ravel())
    return float(np.mean([binary_auc(scores[:, c], onehot[:, c]) for c in range(len(classes))]))
