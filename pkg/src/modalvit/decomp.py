"""Truncated SVD and spatial HOSVD with tolerance- or count-based retention.

Retention by tolerance keeps singular values with sigma_n / sigma_1 > eps
(relative to the largest). All factorizations run in float64 and carry a
deterministic sign convention: each retained left mode / factor column has
its largest-magnitude entry made non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class SvdResult:
    """Truncated factorization M ~ U diag(s) Vt.

    ``left_modes`` is [J, N] with orthonormal columns, ``singular_values``
    the N retained values (non-increasing), ``right_factors`` the [N, K]
    matrix of right singular rows. ``dropped`` holds the discarded tail of
    singular values, so the truncation error sqrt(sum(dropped**2)) is
    available without refactorizing.
    """

    left_modes: np.ndarray
    singular_values: np.ndarray
    right_factors: np.ndarray
    dropped: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.singular_values.size)


@dataclass
class HosvdResult:
    """Tucker-style factorization of a [K, N_y, N_x] stack along the two spatial axes.

    The temporal axis is never factored. ``factors`` = (U_y [N_y, n_y],
    U_x [N_x, n_x]); ``core`` is [K, n_y, n_x]; ``retained`` = (n_y, n_x).
    """

    core: np.ndarray
    factors: tuple[np.ndarray, np.ndarray]
    retained: tuple[int, int]
    dropped_sq: float  # sum of squared dropped singular values over both unfoldings


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite entries")


def _retain_count(s: np.ndarray, rank: Optional[int], tol: Optional[float], limit: int) -> int:
    if (rank is None) == (tol is None):
        raise ValueError("specify exactly one of rank= or tol=")
    if rank is not None:
        if not 1 <= rank <= limit:
            raise ValueError(f"rank must be in [1, {limit}], got {rank}")
        return int(rank)
    if not 0.0 <= tol < 1.0:
        raise ValueError(f"tol must be in [0, 1), got {tol}")
    if s[0] <= 0.0:
        return 1
    return max(1, int(np.count_nonzero(s > tol * s[0])))


def _fix_signs(u: np.ndarray, vt: Optional[np.ndarray] = None) -> None:
    """Make each column of u have a non-negative largest-magnitude entry, in place."""
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] *= -1.0
            if vt is not None:
                vt[j, :] *= -1.0


def truncated_svd(
    m: np.ndarray, rank: Optional[int] = None, tol: Optional[float] = None
) -> SvdResult:
    """Truncated SVD of a [J, K] matrix, retaining either ``rank`` modes or
    all modes with sigma_n / sigma_1 > ``tol``."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    _check_finite(m, "input matrix")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    n = _retain_count(s, rank, tol, min(m.shape))
    u, vt = u[:, :n].copy(), vt[:n, :].copy()
    _fix_signs(u, vt)
    return SvdResult(
        left_modes=u,
        singular_values=s[:n].copy(),
        right_factors=vt,
        dropped=s[n:].copy(),
    )


def svd_reconstruct(r: SvdResult) -> np.ndarray:
    """Low-rank reconstruction U diag(s) Vt as float64 [J, K]."""
    return (r.left_modes * r.singular_values) @ r.right_factors


def _unfold_spatial(t: np.ndarray, axis: int) -> np.ndarray:
    """Mode-``axis`` matricization of a rank-3 stack: [N_axis, everything else]."""
    return np.moveaxis(t, axis, 0).reshape(t.shape[axis], -1)


def hosvd(t: np.ndarray, eps: float) -> HosvdResult:
    """Spatial HOSVD of a [K, N_y, N_x] stack.

    Each spatial unfolding is factorized independently; modes with
    sigma_n / sigma_1 > eps are retained per dimension.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected rank-3 input [K, N_y, N_x], got shape {t.shape}")
    _check_finite(t, "input tensor")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must be in [0, 1), got {eps}")
    factors = []
    retained = []
    dropped_sq = 0.0
    for axis in (1, 2):
        unf = _unfold_spatial(t, axis)
        u, s, _ = np.linalg.svd(unf, full_matrices=False)
        n = 1 if s[0] <= 0.0 else max(1, int(np.count_nonzero(s > eps * s[0])))
        uk = u[:, :n].copy()
        _fix_signs(uk)
        factors.append(uk)
        retained.append(n)
        dropped_sq += float(np.sum(s[n:] ** 2))
    uy, ux = factors
    core = np.einsum("kyx,yi,xj->kij", t, uy, ux, optimize=True)
    return HosvdResult(
        core=core,
        factors=(uy, ux),
        retained=(retained[0], retained[1]),
        dropped_sq=dropped_sq,
    )


def hosvd_reconstruct(r: HosvdResult) -> np.ndarray:
    """Expand the core back through the spatial factors to the full [K, N_y, N_x] stack."""
    uy, ux = r.factors
    return np.einsum("kij,yi,xj->kyx", r.core, uy, ux, optimize=True)
