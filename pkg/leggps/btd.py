"""Symmetric positive-definite block-tridiagonal matrices and cyclic reduction.

A block-tridiagonal matrix J with m blocks of side l is stored as its
diagonal blocks (m, l, l) and lower off-diagonal blocks (m - 1, l, l), where
``offdiag[i]`` is the block at row i + 1, column i.

Cyclic reduction factors J as a permuted block Cholesky factor. At every
stage the blocks at even positions (0, 2, 4, ...) of the current level are
eliminated and the odd positions form the next, halved level:

    D = chol(J[even, even])          one l x l Cholesky per even block
    U = J[odd, even] D^{-T}          block upper-bidiagonal: F on the diagonal,
                                     G on the upper off-diagonal
    J~ = J[odd, odd] - U U^T         again block-tridiagonal

The recursion stops at a level with one block. All stage work is batched
over blocks and may be fanned out over the worker pool in
``leggps.parallel``; blocks never share outputs, so results are identical
for any pool size.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from leggps import parallel
from leggps.exceptions import DimensionMismatch, NotPositiveDefinite

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class BlockTridiag:
    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        if diag.ndim != 3 or diag.shape[1] != diag.shape[2] or len(diag) < 1:
            raise DimensionMismatch(f'diagonal blocks must have shape (m, l, l), got {diag.shape}')
        m, ell = diag.shape[0], diag.shape[1]
        offdiag = np.asarray(self.offdiag, dtype=float)
        if offdiag.size == 0:
            offdiag = np.zeros((0, ell, ell))
        if offdiag.shape != (m - 1, ell, ell):
            raise DimensionMismatch(
                f'expected {m - 1} off-diagonal blocks of side {ell}, got shape {offdiag.shape}')
        scale = np.maximum(1.0, np.abs(diag).max(axis=(1, 2)))
        asym = np.abs(diag - diag.transpose(0, 2, 1)).max(axis=(1, 2))
        bad = np.flatnonzero(asym > SYMMETRY_TOL * scale)
        if len(bad):
            raise DimensionMismatch(f'diagonal block {bad[0]} is not symmetric')
        object.__setattr__(self, 'diag', diag)
        object.__setattr__(self, 'offdiag', offdiag)

    @property
    def m(self):
        return self.diag.shape[0]

    @property
    def block_dim(self):
        return self.diag.shape[1]

    def to_dense(self):
        m, ell = self.m, self.block_dim
        out = np.zeros((m * ell, m * ell))
        for i in range(m):
            out[i * ell:(i + 1) * ell, i * ell:(i + 1) * ell] = self.diag[i]
        for i in range(m - 1):
            lo = self.offdiag[i]
            out[(i + 1) * ell:(i + 2) * ell, i * ell:(i + 1) * ell] = lo
            out[i * ell:(i + 1) * ell, (i + 1) * ell:(i + 2) * ell] = lo.T
        return out

    def matvec(self, v):
        x = _as_blocks(v, self.m, self.block_dim)
        out = _bmv(self.diag, x)
        if self.m > 1:
            out[1:] += _bmv(self.offdiag, x[:-1])
            out[:-1] += _bmv(self.offdiag.transpose(0, 2, 1), x[1:])
        return out.reshape(-1)


@dataclass(frozen=True)
class CRStage:
    """One elimination stage: Cholesky factors of the even blocks plus U."""

    size: int
    D: np.ndarray
    F: np.ndarray
    G: np.ndarray

    @property
    def terminal(self):
        return self.size == 1


@dataclass(frozen=True)
class CRDecomp:
    stages: Tuple[CRStage, ...]
    block_dim: int
    m: int


def _as_blocks(v, m, ell):
    v = np.asarray(v, dtype=float)
    if v.size != m * ell:
        raise DimensionMismatch(f'vector of length {v.size} does not match {m} blocks of side {ell}')
    return v.reshape(m, ell).copy()


def _bmv(mats, vecs):
    return np.matmul(mats, vecs[..., None])[..., 0]


# np.linalg.solve is LU on the whole stack; scipy solve_triangular has no batched form.
def _solve_lower(D, v):
    return np.linalg.solve(D, v[..., None])[..., 0]


def _solve_upper_t(D, v):
    return np.linalg.solve(D.transpose(0, 2, 1), v[..., None])[..., 0]


def _right_solve_t(X, D):
    """X D^{-T}, batched."""
    return np.linalg.solve(D, X.transpose(0, 2, 1)).transpose(0, 2, 1)


def _cholesky_stage(blocks, stage):
    try:
        D = parallel.map_blocks(np.linalg.cholesky, blocks)
    except np.linalg.LinAlgError as exc:
        for i, block in enumerate(blocks):
            try:
                np.linalg.cholesky(block)
            except np.linalg.LinAlgError:
                raise NotPositiveDefinite(stage, 2 * i, exc) from exc
        raise NotPositiveDefinite(stage, -1, exc) from exc
    bad = np.flatnonzero(~np.isfinite(D).all(axis=(1, 2)))
    if len(bad):
        raise NotPositiveDefinite(stage, 2 * int(bad[0]), 'non-finite Cholesky factor')
    return D


def _eliminate(R, O, stage):
    """Factor the even blocks of one level and form the reduced level."""
    m = len(R)
    D = _cholesky_stage(R[0::2], stage)
    if m == 1:
        ell = R.shape[1]
        empty = np.zeros((0, ell, ell))
        return CRStage(1, D, empty, empty), None, None

    n_odd = m // 2
    F = parallel.map_blocks(_right_solve_t, O[0::2], D[:n_odd])
    n_g = (m - 1) // 2
    if n_g:
        G = parallel.map_blocks(_right_solve_t, O[1::2].transpose(0, 2, 1), D[1:1 + n_g])
    else:
        G = np.zeros((0,) + F.shape[1:])

    new_R = R[1::2] - np.matmul(F, F.transpose(0, 2, 1))
    if n_g:
        new_R[:n_g] -= np.matmul(G, G.transpose(0, 2, 1))
    new_R = 0.5 * (new_R + new_R.transpose(0, 2, 1))
    new_O = -np.matmul(F[1:], G[:n_odd - 1].transpose(0, 2, 1))
    return CRStage(m, D, F, G), new_R, new_O


def decompose(J: BlockTridiag) -> CRDecomp:
    stages = []
    R, O = J.diag, J.offdiag
    while R is not None:
        stage, R, O = _eliminate(R, O, len(stages))
        stages.append(stage)
    logger.debug('cyclic reduction of %d blocks finished in %d stages', J.m, len(stages))
    return CRDecomp(tuple(stages), J.block_dim, J.m)


def _stage_layout(d, x):
    """Split natural-order blocks into the per-stage (permuted) layout."""
    pieces = []
    cur = x
    for _ in d.stages:
        pieces.append(cur[0::2])
        cur = cur[1::2]
    return pieces


def _halfsolve(d, b):
    """L^{-1} b, returned in the per-stage layout."""
    pieces = []
    cur = b
    for stage in d.stages:
        y = parallel.map_blocks(_solve_lower, stage.D, cur[0::2])
        pieces.append(y)
        if stage.terminal:
            break
        odd = cur[1::2] - _bmv(stage.F, y[:len(stage.F)])
        n_g = len(stage.G)
        if n_g:
            odd[:n_g] -= _bmv(stage.G, y[1:1 + n_g])
        cur = odd
    return pieces


def _backhalfsolve(d, pieces):
    """L^{-T} c for c in the per-stage layout, returned in natural order."""
    x = None
    for stage, c in zip(reversed(d.stages), reversed(pieces)):
        c = c.copy()
        if x is not None:
            c[:len(stage.F)] -= _bmv(stage.F.transpose(0, 2, 1), x)
            n_g = len(stage.G)
            if n_g:
                c[1:1 + n_g] -= _bmv(stage.G.transpose(0, 2, 1), x[:n_g])
        xe = parallel.map_blocks(_solve_upper_t, stage.D, c)
        full = np.empty((stage.size, d.block_dim))
        full[0::2] = xe
        if x is not None:
            full[1::2] = x
        x = full
    return x


def solve(d: CRDecomp, b) -> np.ndarray:
    pieces = _halfsolve(d, _as_blocks(b, d.m, d.block_dim))
    return _backhalfsolve(d, pieces).reshape(-1)


def mahal(d: CRDecomp, x) -> float:
    """x^T J^{-1} x as the squared norm of L^{-1} x."""
    pieces = _halfsolve(d, _as_blocks(x, d.m, d.block_dim))
    return float(sum(np.sum(p * p) for p in pieces))


def logdet(d: CRDecomp) -> float:
    return float(2.0 * sum(
        np.sum(np.log(np.diagonal(stage.D, axis1=1, axis2=2))) for stage in d.stages))


def sample_precision(d: CRDecomp, eps) -> np.ndarray:
    """L^{-T} eps; standard-normal eps gives a draw from N(0, J^{-1}).

    eps is read in natural block order, so J = I returns eps unchanged.
    """
    pieces = _stage_layout(d, _as_blocks(eps, d.m, d.block_dim))
    return _backhalfsolve(d, pieces).reshape(-1)


def inverse_blocks(d: CRDecomp) -> Tuple[np.ndarray, np.ndarray]:
    """Diagonal and lower off-diagonal blocks of J^{-1}."""
    ell = d.block_dim
    S = T = None
    for stage in reversed(d.stages):
        Dinv = np.linalg.inv(stage.D)
        ev_diag = np.matmul(Dinv.transpose(0, 2, 1), Dinv)
        if stage.terminal:
            S, T = ev_diag, np.zeros((0, ell, ell))
            continue

        n_odd, n_g = len(stage.F), len(stage.G)
        Fv = np.matmul(stage.F, Dinv[:n_odd])
        Gv = np.matmul(stage.G, Dinv[1:1 + n_g])
        FvT = Fv.transpose(0, 2, 1)
        GvT = Gv.transpose(0, 2, 1)

        ev_diag[:n_odd] += FvT @ S @ Fv
        ev_diag[1:1 + n_g] += GvT @ S[:n_g] @ Gv
        k = min(n_odd - 1, n_g)
        if k > 0:
            cross = FvT[1:1 + k] @ T[:k] @ Gv[:k]
            ev_diag[1:1 + k] += cross + cross.transpose(0, 2, 1)

        off = np.empty((stage.size - 1, ell, ell))
        below_even = S @ Fv
        if n_g and n_odd > 1:
            below_even[1:1 + min(n_g, n_odd - 1)] += \
                T[:min(n_g, n_odd - 1)] @ Gv[:min(n_g, n_odd - 1)]
        off[0::2] = -below_even
        if n_g:
            above_even = S[:n_g] @ Gv
            k = min(n_g, n_odd - 1)
            above_even[:k] += T[:k].transpose(0, 2, 1) @ Fv[1:1 + k]
            off[1::2] = -above_even.transpose(0, 2, 1)

        diag = np.empty((stage.size, ell, ell))
        diag[0::2] = ev_diag
        diag[1::2] = S
        S, T = 0.5 * (diag + diag.transpose(0, 2, 1)), off
    return S, T


def mahal_and_logdet(J: BlockTridiag, x) -> Tuple[float, float]:
    """Fused mahal/logdet that keeps only one stage alive at a time."""
    cur = _as_blocks(x, J.m, J.block_dim)
    R, O = J.diag, J.offdiag
    total_mahal = 0.0
    total_logdet = 0.0
    level = 0
    while R is not None:
        stage, R, O = _eliminate(R, O, level)
        y = _solve_lower(stage.D, cur[0::2])
        total_mahal += float(np.sum(y * y))
        total_logdet += 2.0 * float(np.sum(np.log(np.diagonal(stage.D, axis1=1, axis2=2))))
        if not stage.terminal:
            odd = cur[1::2] - _bmv(stage.F, y[:len(stage.F)])
            n_g = len(stage.G)
            if n_g:
                odd[:n_g] -= _bmv(stage.G, y[1:1 + n_g])
            cur = odd
        level += 1
    return total_mahal, total_logdet


def reconstruct(d: CRDecomp, v) -> np.ndarray:
    """J v computed from the factorization as L (L^T v)."""
    x = _as_blocks(v, d.m, d.block_dim)
    pieces = []
    cur = x
    for stage in d.stages:
        even, odd = cur[0::2], cur[1::2]
        w = _bmv(stage.D.transpose(0, 2, 1), even)
        if not stage.terminal:
            w[:len(stage.F)] += _bmv(stage.F.transpose(0, 2, 1), odd)
            n_g = len(stage.G)
            if n_g:
                w[1:1 + n_g] += _bmv(stage.G.transpose(0, 2, 1), odd[:n_g])
        pieces.append(w)
        cur = odd

    out: Optional[np.ndarray] = None
    for stage, w in zip(reversed(d.stages), reversed(pieces)):
        full = np.empty((stage.size, d.block_dim))
        full[0::2] = _bmv(stage.D, w)
        if out is not None:
            below = _bmv(stage.F, w[:len(stage.F)]) + out
            n_g = len(stage.G)
            if n_g:
                below[:n_g] += _bmv(stage.G, w[1:1 + n_g])
            full[1::2] = below
        out = full
    return out.reshape(-1)
