"""
Seed-driven numerical primitives: mask generation, pseudoinverse, symmetric
square root and orthogonal matrices.

Every routine is a pure function of its inputs and works in float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from conda_flake.exceptions import NumericFailure, RankDeficientError

log = logging.getLogger(__name__)

#: relative threshold below which a singular value counts as zero
RANK_TOLERANCE = 1e-8
#: redraws of N before giving up on a full-rank mask
MAX_MASK_ATTEMPTS = 8

# sub-seed namespace for random_orthogonal so it never collides with mask draws
_ORTHOGONAL_STREAM = 0x4F52_5448


@dataclass(frozen=True)
class MaskDims:
    """Mask shape: ``f`` features are lifted into ``k > f`` masked columns."""

    f: int
    k: int

    def __post_init__(self):
        if self.f < 1:
            raise NumericFailure(f"feature count must be at least 1, got {self.f}")
        if self.k <= self.f:
            raise NumericFailure(f"masked width k={self.k} must exceed f={self.f}")

    @classmethod
    def for_features(cls, f: int, k: int | None = None) -> "MaskDims":
        """Default width is ``k = 2f``."""
        return cls(f=f, k=2 * f if k is None else k)


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


class CounterRng:
    """
    Portable counter-based normal stream.

    Words come from Philox4x64-10 keyed with ``(seed, sub_seed)`` and a counter
    starting at zero, so any Philox implementation reproduces them. Each 64-bit
    word becomes a uniform double in [0, 1) from its top 53 bits. Normals use
    Box-Muller on consecutive uniform pairs ``(u1, u2)``:
    ``r = sqrt(-2 log(1 - u1))``, emitting ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``.
    """

    def __init__(self, seed: int, sub_seed: int = 0):
        seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        sub_seed = int(sub_seed) & 0xFFFF_FFFF_FFFF_FFFF
        self._bits = np.random.Philox(key=seed | (sub_seed << 64))

    def uniforms(self, count: int) -> np.ndarray:
        raw = self._bits.random_raw(count)
        return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def normals(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        u = self.uniforms(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        return z.reshape(-1)[:count]


def check_finite(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise NumericFailure(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericFailure(f"{name} contains NaN or infinite entries")
    return m


def svd(m: np.ndarray) -> SvdResult:
    """Economy-size SVD with singular values in descending order."""
    m = check_finite(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"SVD did not converge: {exc}") from exc
    return SvdResult(u=u, s=s, vt=vt)


def _full_rank(s: np.ndarray) -> bool:
    return s[-1] > RANK_TOLERANCE * s[0]


def random_full_rank(seed: int, dims: MaskDims) -> np.ndarray:
    """
    The shared k x f mask N.

    Entries are standard normal from ``CounterRng(seed, attempt)``; a draw whose
    smallest singular value is not above ``1e-8`` times the largest is
    redrawn with the next sub-seed.
    """
    for attempt in range(MAX_MASK_ATTEMPTS):
        values = CounterRng(seed, attempt).normals(dims.k * dims.f)
        n_mask = values.reshape(dims.k, dims.f)
        if _full_rank(svd(n_mask).s):
            return n_mask
        log.debug("mask draw %d is rank deficient, redrawing", attempt)
    raise RankDeficientError(
        f"no full-rank {dims.k}x{dims.f} mask after {MAX_MASK_ATTEMPTS} attempts"
    )


def pseudo_inverse(n: np.ndarray) -> np.ndarray:
    """Moore-Penrose left inverse ``V S^-1 U^T`` of a full-column-rank matrix."""
    result = svd(n)
    if not _full_rank(result.s):
        shape = f"{result.u.shape[0]}x{len(result.s)}"
        raise RankDeficientError(f"matrix of shape {shape} is rank deficient")
    return (result.vt.T / result.s) @ result.u.T


def sym_sqrt(n: np.ndarray) -> np.ndarray:
    """
    ``(N N^T)^(1/2)`` as ``U S U^T`` from the economy SVD of N.

    The k x k product is never formed or eigendecomposed.
    """
    result = svd(n)
    root = (result.u * result.s) @ result.u.T
    return (root + root.T) / 2.0


def random_orthogonal(seed: int, f: int) -> np.ndarray:
    """Seeded f x f orthogonal matrix from the QR of a Gaussian draw."""
    if f < 1:
        raise NumericFailure(f"dimension must be at least 1, got {f}")
    gauss = CounterRng(seed, _ORTHOGONAL_STREAM).normals(f * f).reshape(f, f)
    q, r = np.linalg.qr(gauss)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs
