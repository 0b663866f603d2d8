"""
Kernel SVM on precomputed kernel matrices.

The dual ``max sum(a) - 1/2 a^T Q a`` with ``Q_ij = y_i y_j K_ij``,
``0 <= a_i <= C`` and ``sum(a_i y_i) = 0`` is solved by SMO, always moving the
maximal KKT-violating pair. Ties in the pair selection go to the lowest index,
so a run is fully deterministic. More than two classes train one-vs-rest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from conda_flake.exceptions import ConvergenceError, DimensionMismatchError, SingleClassError
from conda_flake.kernels import KernelSpec

log = logging.getLogger(__name__)

KKT_TOLERANCE = 1e-3
MAX_ITERATIONS = 1_000_000
# floor for the curvature along a non positive-definite pair
TAU = 1e-12


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """
    One dual problem per row: binary models have a single row whose positive
    class is ``class_labels[1]``; one-vs-rest models have one row per class.
    """

    alphas: np.ndarray
    targets: np.ndarray
    bias: np.ndarray
    c_param: float
    class_labels: Tuple[int, ...]
    kernel: Optional[KernelSpec] = None
    iterations: Tuple[int, ...] = field(default=())
    #: dual objective after each SMO step per dual problem; filled by ``train(trace=True)``
    objective_trace: Tuple[Tuple[float, ...], ...] = field(default=())

    @property
    def is_binary(self) -> bool:
        return len(self.class_labels) == 2

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.alphas > 0, axis=0))

    @property
    def dual_coef(self) -> np.ndarray:
        return self.alphas * self.targets

    def to_dict(self) -> dict:
        return {
            "alphas": self.alphas.tolist(),
            "targets": self.targets.tolist(),
            "bias": self.bias.tolist(),
            "c_param": self.c_param,
            "class_labels": list(self.class_labels),
            "kernel": self.kernel.to_dict() if self.kernel else None,
            "support_indices": self.support_indices.tolist(),
        }


def _solve_binary(
    kernel: np.ndarray,
    y: np.ndarray,
    c_param: float,
    tol: float,
    max_iter: int,
    trace: Optional[list] = None,
) -> Tuple[np.ndarray, float, int]:
    n = len(y)
    alpha = np.zeros(n)
    # gradient of 1/2 a^T Q a - sum(a)
    grad = -np.ones(n)
    diag = np.diag(kernel)
    positive = y > 0
    if trace is not None:
        trace.append(0.0)

    for iteration in range(max_iter):
        at_upper = alpha >= c_param
        at_lower = alpha <= 0
        up = np.where(positive, ~at_upper, ~at_lower)
        low = np.where(positive, ~at_lower, ~at_upper)
        score = -y * grad
        i = int(np.argmax(np.where(up, score, -np.inf)))
        j = int(np.argmin(np.where(low, score, np.inf)))
        gap = score[i] - score[j]
        if not (up[i] and low[j]) or gap <= tol:
            break

        eta = max(diag[i] + diag[j] - 2.0 * kernel[i, j], TAU)
        step = gap / eta
        step = min(step, c_param - alpha[i] if y[i] > 0 else alpha[i])
        step = min(step, alpha[j] if y[j] > 0 else c_param - alpha[j])

        alpha[i] = min(max(alpha[i] + y[i] * step, 0.0), c_param)
        alpha[j] = min(max(alpha[j] - y[j] * step, 0.0), c_param)
        grad += step * y * (kernel[:, i] - kernel[:, j])
        if trace is not None:
            # sum(a) - 1/2 a^T Q a, using Q a = grad + 1
            trace.append(-0.5 * float(alpha @ (grad - 1.0)))
    else:
        raise ConvergenceError(f"SMO did not reach KKT tolerance {tol} in {max_iter} iterations")

    free = (alpha > 0) & (alpha < c_param)
    if np.any(free):
        rho = float(np.mean((y * grad)[free]))
    else:
        rho = -(score[i] + score[j]) / 2.0
    return alpha, -rho, iteration


def train(
    kernel_matrix: np.ndarray,
    labels: np.ndarray,
    c_param: float,
    kernel: Optional[KernelSpec] = None,
    tol: float = KKT_TOLERANCE,
    max_iter: int = MAX_ITERATIONS,
    trace: bool = False,
) -> TrainedModel:
    """
    Train on a precomputed kernel matrix. With ``trace`` the dual objective
    is recorded after every SMO step, which costs O(n) per step.
    """
    kernel_matrix = np.asarray(kernel_matrix, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if kernel_matrix.shape != (len(labels), len(labels)):
        raise DimensionMismatchError(
            f"kernel of shape {kernel_matrix.shape} for {len(labels)} labels"
        )
    classes = tuple(int(label) for label in np.unique(labels))
    if len(classes) < 2:
        raise SingleClassError(f"training needs two classes, got {list(classes)}")

    positives = classes[1:] if len(classes) == 2 else classes
    alphas, targets, biases, iterations, traces = [], [], [], [], []
    for positive in positives:
        y = np.where(labels == positive, 1.0, -1.0)
        objective: Optional[list] = [] if trace else None
        alpha, bias, used = _solve_binary(kernel_matrix, y, c_param, tol, max_iter, objective)
        alphas.append(alpha)
        targets.append(y)
        biases.append(bias)
        iterations.append(used)
        if objective is not None:
            traces.append(tuple(objective))
    log.debug(
        "trained %d dual problem(s) with C=%g in %s iterations",
        len(positives),
        c_param,
        iterations,
    )
    return TrainedModel(
        alphas=np.array(alphas),
        targets=np.array(targets),
        bias=np.array(biases),
        c_param=c_param,
        class_labels=classes,
        kernel=kernel,
        iterations=tuple(iterations),
        objective_trace=tuple(traces),
    )


def predict(model: TrainedModel, kernel_rows: np.ndarray) -> np.ndarray:
    """
    Decision scores ``sum_i a_i y_i k(x, x_i) + b``; shape ``(m,)`` for binary
    models and ``(m, classes)`` for one-vs-rest models.
    """
    kernel_rows = np.atleast_2d(np.asarray(kernel_rows, dtype=np.float64))
    if kernel_rows.shape[1] != model.alphas.shape[1]:
        raise DimensionMismatchError(
            f"kernel rows have {kernel_rows.shape[1]} columns, model was trained on "
            f"{model.alphas.shape[1]} samples"
        )
    scores = kernel_rows @ model.dual_coef.T + model.bias
    return scores[:, 0] if model.is_binary else scores


def dual_objective(model: TrainedModel, kernel_matrix: np.ndarray) -> np.ndarray:
    """``sum(a) - 1/2 (a*y)^T K (a*y)`` per dual problem."""
    coef = model.dual_coef
    return model.alphas.sum(axis=1) - 0.5 * np.einsum("ij,jk,ik->i", coef, kernel_matrix, coef)
