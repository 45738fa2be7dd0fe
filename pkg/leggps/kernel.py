"""PEG/LEG covariance kernels, their spectra and conversions.

A PEG process z(t) in R^l has identity marginals and covariance

    C_PEG(tau) = exp(-tau G / 2)      tau >= 0,   G = N N^T + R - R^T
    C_PEG(tau) = C_PEG(-tau)^T        tau < 0

and a LEG process observes it through x(t) = B z(t) + Lambda eps, giving
C_LEG(tau) = B C_PEG(tau) B^T + [tau == 0] Lambda Lambda^T. The parameters
(N, R, B, Lambda) are unconstrained.
"""
import logging
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, List, Sequence

import numpy as np
from scipy import linalg

from leggps import matexp
from leggps.btd import BlockTridiag
from leggps.exceptions import (
    DimensionMismatch, IllConditionedGap, NotPositiveDefiniteTerm, SingularResolvent,
    UnsortedInput, UnsupportedBase,
)

logger = logging.getLogger(__name__)

MIN_GAP = 1e-12
# reciprocal condition of I - A A^T below which a gap counts as singular
GAP_RCOND = 1e-13
RESOLVENT_TOL = 1e-12


@dataclass(frozen=True)
class LEGParams:
    N: np.ndarray
    R: np.ndarray
    B: np.ndarray
    Lambda: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ('N', 'R', 'B', 'Lambda'):
            value = np.array(getattr(self, name), dtype=float)
            if value.ndim != 2:
                raise DimensionMismatch(f'{name} must be a 2-D matrix, got shape {value.shape}')
            if not np.isfinite(value).all():
                raise ValueError(f'{name} has non-finite entries')
            arrays[name] = value
        ell = arrays['N'].shape[0]
        n = arrays['B'].shape[0]
        if arrays['N'].shape != (ell, ell) or arrays['R'].shape != (ell, ell):
            raise DimensionMismatch('N and R must be square and of the same size')
        if arrays['B'].shape != (n, ell):
            raise DimensionMismatch(f'B must have {ell} columns, got shape {arrays["B"].shape}')
        if arrays['Lambda'].shape != (n, n):
            raise DimensionMismatch(f'Lambda must be {n}x{n}, got shape {arrays["Lambda"].shape}')
        for name, value in arrays.items():
            object.__setattr__(self, name, value)

    @property
    def rank(self):
        return self.N.shape[0]

    @property
    def obs_dim(self):
        return self.B.shape[0]

    @property
    def G(self):
        return g_matrix(self.N, self.R)

    @property
    def noise_cov(self):
        return self.Lambda @ self.Lambda.T


@dataclass(frozen=True)
class CeleriteTerm:
    """a e^{-c|tau|} cos(d|tau|) + b e^{-c|tau|} sin(d|tau|)"""

    a: float
    b: float
    c: float
    d: float

    def is_positive_definite(self):
        return self.a >= 0 and self.c >= 0 and abs(self.b * self.d) <= self.a * self.c


@dataclass(frozen=True)
class SMComponent:
    b: np.ndarray
    mu: float
    gamma: float
    base: str = 'cauchy'

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=complex))
        if b.ndim != 1 or not np.isfinite(b).all():
            raise ValueError('b must be a finite complex vector')
        if not self.gamma > 0:
            raise ValueError('gamma must be positive')
        object.__setattr__(self, 'b', b)


def g_matrix(N, R):
    N = np.asarray(N, dtype=float)
    R = np.asarray(R, dtype=float)
    if N.ndim != 2 or N.shape[0] != N.shape[1] or R.shape != N.shape:
        raise DimensionMismatch(f'N {N.shape} and R {R.shape} must be square and equal-sized')
    return N @ N.T + R - R.T


def psd_factor(S):
    """Some F with F F^T = S: Cholesky when possible, else a symmetric square root."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


def c_peg_many(taus, N, R, cache=None):
    """C_PEG at every lag in taus, stacked as (k, l, l)."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if cache is None:
        cache = matexp.eigen_cache(g_matrix(N, R))
    out = matexp.expm_multi(None, -0.5 * np.abs(taus), cache)
    neg = taus < 0
    out[neg] = out[neg].transpose(0, 2, 1)
    return out


def c_peg(tau, N, R):
    return c_peg_many([tau], N, R)[0]


def c_leg_many(taus, p: LEGParams):
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    out = p.B @ c_peg_many(taus, p.N, p.R) @ p.B.T
    out[taus == 0] += p.noise_cov
    return out


def c_leg(tau, p: LEGParams):
    return c_leg_many([tau], p)[0]


def peg_gram(times, N, R):
    """Dense covariance of (z(t_1), ..., z(t_k)), block (i, j) = C_PEG(t_i - t_j)."""
    times = np.asarray(times, dtype=float)
    k = len(times)
    ell = np.asarray(N).shape[0]
    lags = (times[:, None] - times[None, :]).reshape(-1)
    blocks = c_peg_many(lags, N, R).reshape(k, k, ell, ell)
    return blocks.transpose(0, 2, 1, 3).reshape(k * ell, k * ell)


def leg_gram(times, p: LEGParams):
    """Dense covariance of one observation per entry of ``times``.

    Noise enters only on the diagonal: two observations sharing a timestamp
    are independent given z.
    """
    times = np.asarray(times, dtype=float)
    k, n = len(times), p.obs_dim
    lags = (times[:, None] - times[None, :]).reshape(-1)
    blocks = (p.B @ c_peg_many(lags, p.N, p.R) @ p.B.T).reshape(k, k, n, n)
    blocks[np.arange(k), np.arange(k)] += p.noise_cov
    return blocks.transpose(0, 2, 1, 3).reshape(k * n, k * n)


def leg_sum(p1: LEGParams, p2: LEGParams) -> LEGParams:
    if p1.obs_dim != p2.obs_dim:
        raise DimensionMismatch(
            f'cannot add kernels with observation dimensions {p1.obs_dim} and {p2.obs_dim}')
    return LEGParams(
        N=linalg.block_diag(p1.N, p2.N),
        R=linalg.block_diag(p1.R, p2.R),
        B=np.hstack([p1.B, p2.B]),
        Lambda=psd_factor(p1.noise_cov + p2.noise_cov),
    )


def peg_spectrum(omega, N, R):
    """Spectral density M(omega) with C_PEG(tau) = int e^{-i omega tau} M(omega) d omega."""
    N = np.asarray(N, dtype=float)
    nnt = N @ N.T
    w = np.linalg.eigvalsh(nnt)
    if w.min() <= RESOLVENT_TOL * max(1.0, w.max()):
        raise SingularResolvent('N N^T must be strictly positive definite')
    G = g_matrix(N, R)
    eye = np.eye(len(G))
    X = np.linalg.inv(0.5 * G - 1j * omega * eye)
    return (X + X.conj().T) / (2 * np.pi)


def leg_spectrum(omega, p: LEGParams):
    """Spectrum of the continuous part B C_PEG B^T (the Lambda = 0 kernel)."""
    return p.B @ peg_spectrum(omega, p.N, p.R) @ p.B.T


def celerite_eval(tau, term: CeleriteTerm):
    tau = np.abs(np.asarray(tau, dtype=float))
    decay = np.exp(-term.c * tau)
    return term.a * decay * np.cos(term.d * tau) + term.b * decay * np.sin(term.d * tau)


def celerite_to_leg(term: CeleriteTerm) -> LEGParams:
    """Rank-2 LEG kernel equal to one positive-definite Celerite term.

    G / 2 has eigenvalues c +- i d and its off-centre part K = G/2 - cI has
    K[0, 0] = -bd/a and K^2 = -d^2 I, so reading the kernel through
    B = (sqrt(a), 0) gives a e^{-c tau}(cos d tau + (bd/a)/d sin d tau).
    """
    if not term.is_positive_definite():
        raise NotPositiveDefiniteTerm(
            f'celerite term (a={term.a}, b={term.b}, c={term.c}, d={term.d}) is not positive '
            f'definite: need |bd| <= ac with a, c >= 0')
    a, b, c, d = term.a, term.b, term.c, term.d
    beta = b * d / a if a > 0 else 0.0
    n1 = np.sqrt(max(2 * c - 2 * beta, 0.0))
    r1 = np.sqrt(2 * c ** 2 + 4 * d ** 2 + 2 * beta ** 2)
    n2 = np.sqrt(max(c + beta, 0.0))
    return LEGParams(
        N=[[n1, 0.0], [n2, n2]],
        R=[[0.0, r1], [0.0, 0.0]],
        B=[[np.sqrt(a), 0.0]],
        Lambda=[[0.0]],
    )


def celerite_kernel_to_leg(terms: Iterable[CeleriteTerm]) -> LEGParams:
    """Sum of positive-definite Celerite terms as one LEG kernel of rank 2 * len(terms)."""
    return reduce(leg_sum, (celerite_to_leg(term) for term in terms))


def sm_eval(tau, components: Sequence[SMComponent]):
    """Spectral-mixture kernel at lag tau (n x n complex)."""
    out = 0
    for comp in components:
        if comp.base != 'cauchy':
            raise UnsupportedBase(f'spectral mixture base {comp.base!r} is not supported')
        weight = np.exp(-1j * comp.mu * tau - abs(tau) / comp.gamma)
        out = out + np.outer(comp.b, comp.b.conj()) * weight
    return np.asarray(out, dtype=complex)


def simple_real_sm(b, mu, gamma) -> List[SMComponent]:
    """Conjugate pair whose mixture equals Re(b b^* e^{-i mu tau - |tau|/gamma})."""
    b = np.atleast_1d(np.asarray(b, dtype=complex))
    half = 1 / np.sqrt(2)
    return [SMComponent(b * half, mu, gamma), SMComponent(b.conj() * half, -mu, gamma)]


def sm_to_leg(b, mu, gamma) -> LEGParams:
    """Rank-2 LEG kernel equal to the simple real SM kernel of (b, mu, gamma)."""
    if not gamma > 0:
        raise ValueError('gamma must be positive')
    b = np.atleast_1d(np.asarray(b, dtype=complex))
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return LEGParams(
        N=np.sqrt(2 / gamma) * np.eye(2),
        R=mu * rot,
        B=np.column_stack([b.real, b.imag]),
        Lambda=np.zeros((len(b), len(b))),
    )


def sm_mixture_to_leg(components: Iterable) -> LEGParams:
    """Several (b, mu, gamma) simple real SM kernels folded into one LEG kernel."""
    return reduce(leg_sum, (sm_to_leg(b, mu, gamma) for b, mu, gamma in components))


def transition(gaps, N, R, cache=None):
    """A_i = exp(-d_i G / 2) and Q_i = I - A_i A_i^T for each gap d_i.

    A_i is the conditional mean map z(t_{i+1}) | z(t_i) and Q_i its covariance.
    """
    gaps = np.atleast_1d(np.asarray(gaps, dtype=float))
    if cache is None:
        cache = matexp.eigen_cache(g_matrix(N, R))
    A = matexp.expm_multi(None, -0.5 * gaps, cache)
    Q = np.eye(cache.dim) - A @ A.transpose(0, 2, 1)
    return A, 0.5 * (Q + Q.transpose(0, 2, 1))


def _inverse_spd(Q, gaps):
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        L = None
    if L is not None:
        diag = np.diagonal(L, axis1=1, axis2=2)
        rcond = (diag.min(axis=1) / diag.max(axis=1)) ** 2
        bad = np.flatnonzero(~(rcond > GAP_RCOND))
    else:
        bad = [i for i, q in enumerate(Q) if np.linalg.eigvalsh(q).min() <= 0] or [0]
    if len(bad):
        i = int(bad[0])
        raise IllConditionedGap(f'gap {i} of length {gaps[i]:.3g} leaves I - A A^T singular')
    Linv = np.linalg.inv(L)
    return Linv.transpose(0, 2, 1) @ Linv


def precision_blocks(gaps, N, R, cache=None):
    """Block-tridiagonal inverse of the PEG covariance at times with these gaps.

    diag_i = [i = 0] I + [i > 0] Q_{i-1}^{-1} + [i < m-1] A_i^T Q_i^{-1} A_i
    offdiag_i = -Q_i^{-1} A_i          (row i + 1, column i)

    The boundary terms are the d -> infinity limits (A = 0) and are written
    in directly.
    """
    gaps = np.atleast_1d(np.asarray(gaps, dtype=float)).reshape(-1)
    ell = np.asarray(N).shape[0]
    m = len(gaps) + 1
    if m == 1:
        return BlockTridiag(np.eye(ell)[None], np.zeros((0, ell, ell)))
    if (gaps < 0).any():
        raise UnsortedInput('times must be sorted (found a negative gap)')
    if not (np.isfinite(gaps).all() and (gaps >= MIN_GAP).all()):
        raise IllConditionedGap(f'gaps must be finite and at least {MIN_GAP}')

    A, Q = transition(gaps, N, R, cache)
    Qinv = _inverse_spd(Q, gaps)
    QinvA = Qinv @ A

    diag = np.zeros((m, ell, ell))
    diag[0] = np.eye(ell)
    diag[1:] += Qinv
    diag[:-1] += A.transpose(0, 2, 1) @ QinvA
    diag = 0.5 * (diag + diag.transpose(0, 2, 1))
    return BlockTridiag(diag, -QinvA)
