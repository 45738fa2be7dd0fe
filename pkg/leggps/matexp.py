"""Batched matrix exponentials exp(t G) from a single eigendecomposition.

    G = U diag(lam) U^{-1}  =>  exp(t G) = U diag(exp(t lam)) U^{-1}

so every extra t costs one l x l product instead of a fresh exponential.
Gradients use the divided differences of exp(t lam) between eigenvalue
pairs, which avoids differentiating through the eigendecomposition.

When the eigenvectors are too ill-conditioned (near-defective G) the forward
pass falls back to scipy's scaling-and-squaring ``expm`` and the gradient to
central finite differences.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import linalg

from leggps.exceptions import DefectiveMatrix, DimensionMismatch

logger = logging.getLogger(__name__)

COND_LIMIT = 1e8
INVERSE_TOL = 1e-8
IMAG_TOL = 1e-8
DEGENERATE_TOL = 1e-8
FD_STEP = 1e-6


@dataclass(frozen=True)
class EigenCache:
    G: np.ndarray
    eigvals: np.ndarray
    U: np.ndarray
    Ui: np.ndarray
    cond: float
    usable: bool

    @property
    def dim(self):
        return self.G.shape[0]


def _check_square(G):
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise DimensionMismatch(f'expected a square matrix, got shape {G.shape}')
    return G


def eigen_cache(G) -> EigenCache:
    G = _check_square(G)
    if not np.isfinite(G).all():
        raise DefectiveMatrix('matrix has non-finite entries')
    eigvals, U = np.linalg.eig(G)
    cond = float(np.linalg.cond(U))
    usable = np.isfinite(cond) and cond <= COND_LIMIT
    Ui = np.linalg.inv(U) if usable else np.full_like(U, np.nan)
    if usable:
        usable = np.abs(U @ Ui - np.eye(len(G))).max() <= INVERSE_TOL
    if not usable:
        logger.debug('eigenvector condition %.3g too large, using scaling and squaring', cond)
    return EigenCache(G, eigvals, U, Ui, cond, bool(usable))


def _as_times(tlist):
    t = np.atleast_1d(np.asarray(tlist, dtype=float))
    if t.ndim != 1 or not np.isfinite(t).all():
        raise ValueError('tlist must be a finite vector of scalars')
    return t


def _expm_fallback(G, t):
    out = linalg.expm(t[:, None, None] * G[None])
    if not np.isfinite(out).all():
        raise DefectiveMatrix('scaling-and-squaring exponential produced non-finite values')
    return out


def expm_multi(G, tlist, cache: EigenCache = None) -> np.ndarray:
    """exp(t G) for every t in tlist, stacked as (len(tlist), l, l)."""
    if cache is None:
        cache = eigen_cache(G)
    t = _as_times(tlist)
    if not cache.usable:
        return _expm_fallback(cache.G, t)

    rez = np.einsum('jr,mr,rk->mjk', cache.U, np.exp(np.outer(t, cache.eigvals)), cache.Ui)
    scale = np.maximum(1.0, np.abs(rez.real).max(axis=(1, 2)))
    if (np.abs(rez.imag).max(axis=(1, 2)) > IMAG_TOL * scale).any():
        logger.debug('imaginary residue above tolerance, recomputing by scaling and squaring')
        return _expm_fallback(cache.G, t)
    return rez.real.copy()


def divided_differences(eigvals, t) -> np.ndarray:
    """Phi[i, j] = (e^{lam_i t} - e^{lam_j t}) / (lam_i - lam_j), t e^{lam_i t} when lam_i ~ lam_j."""
    li = eigvals[:, None]
    lj = eigvals[None, :]
    diff = li - lj
    close = np.abs(diff) < DEGENERATE_TOL * (1.0 + np.abs(li))
    ei = np.exp(li * t)
    ej = np.exp(lj * t)
    safe = np.where(close, 1.0, diff)
    return np.where(close, t * ei, (ei - ej) / safe)


def _grad_fd(G, M, t):
    grad_G = np.zeros_like(G)
    for i in range(G.shape[0]):
        for j in range(G.shape[1]):
            h = FD_STEP * (1.0 + abs(G[i, j]))
            bump = np.zeros_like(G)
            bump[i, j] = h
            up = _expm_fallback(G + bump, t)
            down = _expm_fallback(G - bump, t)
            grad_G[i, j] = np.sum(M * (up - down)) / (2 * h)
    rez = _expm_fallback(G, t)
    grad_t = np.einsum('mkr,mkr->m', M, G[None] @ rez)
    return grad_G, grad_t


def expm_grad(cache: EigenCache, M: Sequence[np.ndarray], tlist) -> Tuple[np.ndarray, np.ndarray]:
    """Back-propagate cotangents M_m of exp(t_m G) to G and to each t_m."""
    t = _as_times(tlist)
    M = np.asarray(M, dtype=float).reshape(len(t), cache.dim, cache.dim)
    if not cache.usable:
        return _grad_fd(cache.G, M, t)

    U, Ui, lam = cache.U, cache.Ui, cache.eigvals
    H = np.zeros((cache.dim, cache.dim), dtype=complex)
    for m, tm in enumerate(t):
        H += divided_differences(lam, tm) * (U.T @ M[m] @ Ui.T)
    grad_G = (Ui.T @ H @ U.T).real

    # d/dt exp(tG) = U diag(lam e^{lam t}) U^{-1}
    dexp = np.einsum('jr,mr,rk->mjk', U, lam[None, :] * np.exp(np.outer(t, lam)), Ui)
    grad_t = np.einsum('mkr,mkr->m', M, dexp).real
    return grad_G, grad_t
