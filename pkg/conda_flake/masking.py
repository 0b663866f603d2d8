"""
Input-party masking.

A party lifts its n x f data into n x k with ``D' = D L_P (N N^T)^(1/2)``. N is
shared through the seed, L_P is a private left inverse of N that changes every
iteration, so ``D'_P D'_Q^T = D_P D_Q^T`` for any two parties.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from conda_flake.data import DataMatrix
from conda_flake.exceptions import DataFormatError, DimensionMismatchError, ZeroRowError
from conda_flake.linalg import MaskDims, pseudo_inverse, random_full_rank, sym_sqrt

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MaskContext:
    seed: int
    dims: MaskDims
    party_id: str
    private_seed: int
    n_mask: np.ndarray
    pinv: np.ndarray
    sqrt_nnt: np.ndarray
    left_inv: np.ndarray
    iteration: int = 0


@dataclass(frozen=True, eq=False)
class MaskedMatrix:
    """n x k payload; nothing in it depends on f."""

    payload: np.ndarray
    party_id: str
    iteration: int

    @property
    def sample_count(self) -> int:
        return self.payload.shape[0]

    @property
    def width(self) -> int:
        return self.payload.shape[1]


def _party_rng(private_seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([private_seed, iteration])


def randomize_left_inverse(
    n_mask: np.ndarray,
    l0: np.ndarray,
    party_rng: Optional[np.random.Generator] = None,
    *,
    perturbation: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Draw ``L_P = L0 + M (I_k - N L0)`` for a fresh Gaussian f x k matrix M.

    Every left inverse of N has this form; ``perturbation`` fixes M instead of
    drawing it.
    """
    k, f = n_mask.shape
    if perturbation is None:
        perturbation = party_rng.standard_normal((f, k))
    return l0 + perturbation @ (np.eye(k) - n_mask @ l0)


def build_mask_context(
    seed: int,
    dims: MaskDims,
    party_id: str,
    party_private_seed: int,
) -> MaskContext:
    n_mask = random_full_rank(seed, dims)
    pinv = pseudo_inverse(n_mask)
    left_inv = randomize_left_inverse(n_mask, pinv, _party_rng(party_private_seed, 0))
    log.debug("party %s built mask context k=%d", party_id, dims.k)
    return MaskContext(
        seed=seed,
        dims=dims,
        party_id=party_id,
        private_seed=party_private_seed,
        n_mask=n_mask,
        pinv=pinv,
        sqrt_nnt=sym_sqrt(n_mask),
        left_inv=left_inv,
    )


def advance_iteration(ctx: MaskContext) -> MaskContext:
    """Next iteration's context: fresh L_P, same N and (N N^T)^(1/2)."""
    iteration = ctx.iteration + 1
    left_inv = randomize_left_inverse(
        ctx.n_mask, ctx.pinv, _party_rng(ctx.private_seed, iteration)
    )
    return replace(ctx, left_inv=left_inv, iteration=iteration)


def validate_rows(data: DataMatrix) -> None:
    non_finite = np.flatnonzero(~np.isfinite(data.values).all(axis=1))
    if non_finite.size:
        shown = ", ".join(str(row) for row in non_finite[:20])
        raise DataFormatError(f"NaN or infinite values are not allowed (rows: {shown})")
    zero_rows = np.flatnonzero(~np.any(data.values != 0, axis=1))
    if zero_rows.size:
        raise ZeroRowError(zero_rows)


def mask(data: DataMatrix, ctx: MaskContext) -> MaskedMatrix:
    if data.n_features != ctx.dims.f:
        raise DimensionMismatchError(
            f"data has {data.n_features} features, mask expects {ctx.dims.f}"
        )
    validate_rows(data)
    payload = data.values @ ctx.left_inv @ ctx.sqrt_nnt
    return MaskedMatrix(payload=payload, party_id=ctx.party_id, iteration=ctx.iteration)
