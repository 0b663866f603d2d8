"""
Kernel matrices derived from Gram entries alone.

Polynomial: ``(gamma g_ij + v)^p``. RBF: ``exp(-(g_ii - 2 g_ij + g_jj) / (2 sigma^2))``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Union

import numpy as np

from conda_flake.exceptions import KernelParameterError
from conda_flake.gram import GramMatrix

KernelKind = Literal["linear", "polynomial", "rbf"]
KERNEL_KINDS = ("linear", "polynomial", "rbf")

#: resolve gamma as ``1 / mean(diag(G))``
SCALE = "scale"

GramLike = Union[GramMatrix, np.ndarray]


def gram_values(g: GramLike) -> np.ndarray:
    return g.values if isinstance(g, GramMatrix) else np.asarray(g, dtype=np.float64)


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = "polynomial"
    v: float = 0.0
    p: int = 1
    sigma: float = 1.0
    gamma: Union[float, str] = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise KernelParameterError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "polynomial":
            _check_poly(self.v, self.p)
            if self.gamma != SCALE and not float(self.gamma) > 0:
                raise KernelParameterError(
                    f"gamma must be positive or {SCALE!r}, got {self.gamma}"
                )
        if self.kind == "rbf":
            _check_sigma(self.sigma)

    def resolved(self, g: GramLike) -> "KernelSpec":
        """Fix ``gamma='scale'`` against the training Gram matrix."""
        if self.gamma != SCALE:
            return self
        diag = np.diag(gram_values(g))
        mean = float(np.mean(diag)) if diag.size else 0.0
        return replace(self, gamma=1.0 / mean if mean > 0 else 1.0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "v": self.v,
            "p": self.p,
            "sigma": self.sigma,
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(**data)


def _check_poly(v: float, p: int) -> None:
    if v < 0:
        raise KernelParameterError(f"polynomial offset v must be >= 0, got {v}")
    if int(p) != p or p < 1:
        raise KernelParameterError(f"polynomial degree p must be a positive integer, got {p}")


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise KernelParameterError(f"rbf width sigma must be > 0, got {sigma}")


def poly_kernel(g: GramLike, v: float, p: int, gamma: float = 1.0) -> np.ndarray:
    _check_poly(v, p)
    return (gamma * gram_values(g) + v) ** int(p)


def _rbf_from_distances(distances: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-np.maximum(distances, 0.0) / (2.0 * sigma**2))


def rbf_kernel(g: GramLike, sigma: float) -> np.ndarray:
    _check_sigma(sigma)
    values = gram_values(g)
    diag = np.diag(values)
    distances = diag[:, None] - 2.0 * values + diag[None, :]
    kernel = _rbf_from_distances(distances, sigma)
    np.fill_diagonal(kernel, 1.0)
    return kernel


def kernel_matrix(g: GramLike, spec: KernelSpec) -> np.ndarray:
    if spec.kind == "linear":
        return gram_values(g).copy()
    if spec.kind == "polynomial":
        spec = spec.resolved(g)
        return poly_kernel(g, spec.v, spec.p, spec.gamma)
    return rbf_kernel(g, spec.sigma)


def cross_kernel(
    cross: np.ndarray,
    test_sq_norms: np.ndarray,
    train_sq_norms: np.ndarray,
    spec: KernelSpec,
) -> np.ndarray:
    """
    Kernel rows ``k(x, x_i)`` for test samples from their inner products with
    the training samples. ``spec`` must already be resolved.
    """
    if spec.gamma == SCALE:
        raise KernelParameterError("resolve gamma against the training Gram before scoring")
    if spec.kind == "linear":
        return np.array(cross, dtype=np.float64)
    if spec.kind == "polynomial":
        return poly_kernel(cross, spec.v, spec.p, spec.gamma)
    distances = test_sq_norms[:, None] - 2.0 * cross + train_sq_norms[None, :]
    return _rbf_from_distances(distances, spec.sigma)
