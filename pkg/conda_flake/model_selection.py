"""
Stratified 5-fold cross-validation with a grid search over C and the kernel
parameter, run entirely on a precomputed Gram matrix.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import StratifiedKFold

from conda_flake.exceptions import StratificationError
from conda_flake.kernels import GramLike, KernelSpec, gram_values, kernel_matrix
from conda_flake.metrics import Averaging, roc_auc
from conda_flake.svm import KKT_TOLERANCE, predict, train
from conda_flake.utils import Stopwatch

log = logging.getLogger(__name__)

N_FOLDS = 5
#: shuffle seed of the stratified split
FOLD_SEED = 20230517
DEFAULT_C_GRID = tuple(2.0**e for e in range(-4, 11))
DEFAULT_DEGREE_GRID = (1, 2, 3, 4, 5)
DEFAULT_SIGMA_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class GridPoint:
    c_param: float
    param: float
    mean_auc: float
    std_auc: float


@dataclass
class CvReport:
    best_c: float
    best_param: float
    param_name: str
    fold_aucs: List[float]
    mean_auc: float
    std_auc: float
    averaging: str = "macro"
    grid: List[GridPoint] = field(default_factory=list)

    @property
    def best_p(self) -> Optional[int]:
        return int(self.best_param) if self.param_name == "p" else None

    @property
    def best_sigma(self) -> Optional[float]:
        return self.best_param if self.param_name == "sigma" else None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CvReport":
        data = dict(data)
        data["grid"] = [GridPoint(**point) for point in data.get("grid", [])]
        data["fold_aucs"] = [float(auc) for auc in data["fold_aucs"]]
        return cls(**data)


def stratified_folds(
    labels: np.ndarray, n_folds: int = N_FOLDS, seed: int = FOLD_SEED
) -> List[Tuple[np.ndarray, np.ndarray]]:
    labels = np.asarray(labels).reshape(-1)
    classes, counts = np.unique(labels, return_counts=True)
    short = [int(c) for c, count in zip(classes, counts) if count < n_folds]
    if short:
        raise StratificationError(
            f"classes {short} have fewer than {n_folds} members; cannot stratify"
        )
    splitter = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    return list(splitter.split(np.zeros(len(labels)), labels))


def _fold_aucs(
    kernel: np.ndarray,
    labels: np.ndarray,
    folds: Sequence[Tuple[np.ndarray, np.ndarray]],
    c_param: float,
    averaging: Averaging,
    tol: float,
) -> List[float]:
    classes = np.unique(labels)
    aucs = []
    for train_idx, test_idx in folds:
        model = train(kernel[np.ix_(train_idx, train_idx)], labels[train_idx], c_param, tol=tol)
        scores = predict(model, kernel[np.ix_(test_idx, train_idx)])
        aucs.append(roc_auc(scores, labels[test_idx], averaging, classes=classes))
    return aucs


def cross_validate_grid(
    gram: GramLike,
    labels: np.ndarray,
    c_grid: Sequence[float] = DEFAULT_C_GRID,
    degree_grid: Sequence[int] = DEFAULT_DEGREE_GRID,
    kernel: Optional[KernelSpec] = None,
    sigma_grid: Optional[Sequence[float]] = None,
    averaging: Averaging = "macro",
    seed: int = FOLD_SEED,
    tol: float = KKT_TOLERANCE,
    timings: Optional[Dict[Tuple[float, float], float]] = None,
) -> CvReport:
    """
    Score every (C, p) pair, or every (C, sigma) pair for an RBF ``kernel``,
    by mean fold AUC. The best pair wins; ties keep the smaller C, then the
    smaller kernel parameter.

    When ``timings`` is given, the seconds spent on the folds of each
    ``(C, parameter)`` pair are stored in it.
    """
    labels = np.asarray(labels).reshape(-1)
    kernel = kernel or KernelSpec("polynomial")
    values = gram_values(gram)
    kernel = kernel.resolved(values)
    folds = stratified_folds(labels, N_FOLDS, seed)

    if kernel.kind == "rbf":
        param_name = "sigma"
        params = sorted(sigma_grid or DEFAULT_SIGMA_GRID)
        specs = [replace(kernel, sigma=float(s)) for s in params]
    elif kernel.kind == "polynomial":
        param_name = "p"
        params = sorted(degree_grid)
        specs = [replace(kernel, p=int(p)) for p in params]
    else:
        param_name = "p"
        params = [1]
        specs = [kernel]

    best: Optional[Tuple[float, float, List[float]]] = None
    best_mean = -np.inf
    grid = []
    for param, spec in zip(params, specs):
        matrix = kernel_matrix(values, spec)
        for c_param in sorted(c_grid):
            if timings is None:
                aucs = _fold_aucs(matrix, labels, folds, c_param, averaging, tol)
            else:
                with Stopwatch() as folds_timer:
                    aucs = _fold_aucs(matrix, labels, folds, c_param, averaging, tol)
                timings[(c_param, float(param))] = folds_timer.elapsed
            mean, std = float(np.mean(aucs)), float(np.std(aucs))
            grid.append(GridPoint(c_param, float(param), mean, std))
            log.debug("C=%g %s=%s mean AUC %.6f", c_param, param_name, param, mean)
            if mean > best_mean or (
                mean == best_mean and (c_param, param) < (best[0], best[1])
            ):
                best_mean = mean
                best = (c_param, float(param), aucs)

    best_c, best_param, fold_aucs = best
    log.info("best C=%g %s=%s mean AUC %.6f", best_c, param_name, best_param, best_mean)
    return CvReport(
        best_c=best_c,
        best_param=best_param,
        param_name=param_name,
        fold_aucs=[float(a) for a in fold_aucs],
        mean_auc=float(np.mean(fold_aucs)),
        std_auc=float(np.std(fold_aucs)),
        averaging=averaging,
        grid=grid,
    )


def best_kernel(report: CvReport, template: KernelSpec) -> KernelSpec:
    if report.param_name == "sigma":
        return replace(template, sigma=report.best_param)
    if template.kind == "polynomial":
        return replace(template, p=int(report.best_param))
    return template
