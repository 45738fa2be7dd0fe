"""Likelihood, posterior, prediction and simulation for LEG models.

The latents z_1..z_m at the distinct observation times have a
block-tridiagonal prior precision (``kernel.precision_blocks``). Adding the
observation terms B^T (Lambda Lambda^T)^{-1} B to the diagonal keeps that
shape, so every quantity here reduces to cyclic reduction on

    J_post = Sigma^{-1} + B~^T Lambda~^{-1} B~,    h = B~^T Lambda~^{-1} x

with cost linear in the number of timestamps.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg

from leggps import btd, matexp, parallel
from leggps.exceptions import DimensionMismatch, EmptyInput, SingularNoise, UnsortedInput
from leggps.kernel import LEGParams, precision_blocks, psd_factor, transition

logger = logging.getLogger(__name__)

NOISE_RCOND = 1e-12
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class TimeSeries:
    """Observations ``values[k]`` taken at ``times[idx[k]]``."""

    times: np.ndarray
    values: np.ndarray
    idx: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        idx = np.asarray(self.idx, dtype=int).reshape(-1)
        if len(times) == 0 or len(values) == 0:
            raise EmptyInput('a time series needs at least one observation')
        if values.ndim != 2 or values.shape[1] < 1:
            raise DimensionMismatch(f'values must be an m x n matrix, got shape {values.shape}')
        if len(idx) != len(values):
            raise DimensionMismatch(f'{len(idx)} time indices for {len(values)} observations')
        if (np.diff(times) <= 0).any():
            raise UnsortedInput('times must be strictly increasing')
        if (np.diff(idx) < 0).any() or idx.min() < 0 or idx.max() >= len(times):
            raise UnsortedInput('idx must be nondecreasing indices into times')
        if not (np.isfinite(times).all() and np.isfinite(values).all()):
            raise ValueError('times and values must be finite')
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'idx', idx)

    @property
    def n_obs(self):
        return len(self.values)

    @property
    def obs_dim(self):
        return self.values.shape[1]

    @property
    def n_times(self):
        return len(self.times)

    @property
    def raw_times(self):
        return self.times[self.idx]


@dataclass(frozen=True)
class PosteriorSummary:
    means: np.ndarray
    cov_diag: np.ndarray
    cov_offdiag: np.ndarray


def dedup(raw_times, raw_values) -> TimeSeries:
    raw_times = np.asarray(raw_times, dtype=float).reshape(-1)
    raw_values = np.asarray(raw_values, dtype=float)
    if raw_values.ndim == 1:
        raw_values = raw_values[:, None]
    if len(raw_times) == 0:
        raise EmptyInput('no observations')
    if len(raw_values) != len(raw_times):
        raise DimensionMismatch(f'{len(raw_times)} times for {len(raw_values)} observations')
    if (np.diff(raw_times) < 0).any():
        raise UnsortedInput('observation times must be sorted')
    times, idx = np.unique(raw_times, return_inverse=True)
    return TimeSeries(times, raw_values, idx)


def _noise_precision(p: LEGParams, jitter):
    cov = p.noise_cov + jitter * np.eye(p.obs_dim)
    try:
        factor = linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularNoise(
            'Lambda Lambda^T + jitter I is not invertible; use a positive jitter') from exc
    diag = np.abs(np.diagonal(factor[0]))
    if not (diag.min() > np.sqrt(NOISE_RCOND) * diag.max()):
        raise SingularNoise('Lambda Lambda^T + jitter I is singular at working precision; '
                            'use a positive jitter')
    precision = linalg.cho_solve(factor, np.eye(p.obs_dim))
    return 0.5 * (precision + precision.T), 2.0 * float(np.sum(np.log(diag)))


def _check_series(ts: TimeSeries, p: LEGParams):
    if ts.obs_dim != p.obs_dim:
        raise DimensionMismatch(
            f'series has {ts.obs_dim} columns but the model observes {p.obs_dim}')


def _posterior_system(ts: TimeSeries, p: LEGParams, jitter, cache=None):
    """Prior precision, posterior precision, h, sum x^T P x and log det of the noise."""
    _check_series(ts, p)
    precision, noise_logdet = _noise_precision(p, jitter)
    prior = precision_blocks(np.diff(ts.times), p.N, p.R, cache)

    PB = precision @ p.B
    counts = np.bincount(ts.idx, minlength=ts.n_times)
    xsum = np.zeros((ts.n_times, ts.obs_dim))
    np.add.at(xsum, ts.idx, ts.values)

    diag = prior.diag + counts[:, None, None] * (p.B.T @ PB)[None]
    J_post = btd.BlockTridiag(diag, prior.offdiag)
    h = xsum @ PB
    quad = float(np.einsum('ki,ij,kj->', ts.values, precision, ts.values))
    return prior, J_post, h, quad, noise_logdet


def log_likelihood(ts: TimeSeries, p: LEGParams, jitter=0.0) -> float:
    """log p(x) by the matrix determinant lemma and Woodbury on J_post."""
    prior, J_post, h, quad, noise_logdet = _posterior_system(ts, p, jitter)
    _, prior_logdet = btd.mahal_and_logdet(prior, np.zeros(prior.m * prior.block_dim))
    h_mahal, post_logdet = btd.mahal_and_logdet(J_post, h)
    return -0.5 * (ts.n_obs * ts.obs_dim * LOG_2PI
                   + quad - h_mahal
                   + ts.n_obs * noise_logdet
                   + post_logdet - prior_logdet)


def nats_per_observation(series: Sequence[TimeSeries], p: LEGParams, jitter=0.0) -> float:
    """Average negative log-likelihood per observation row."""
    if isinstance(series, TimeSeries):
        series = [series]
    total = sum(log_likelihood(ts, p, jitter) for ts in series)
    return -total / sum(ts.n_obs for ts in series)


def peg_log_density(times, N, R, z) -> float:
    """log p(z_1..z_m) of a latent PEG path at strictly increasing times."""
    times = np.asarray(times, dtype=float).reshape(-1)
    if len(times) == 0:
        raise EmptyInput('no sample times')
    J = precision_blocks(np.diff(times), N, R)
    z = np.asarray(z, dtype=float).reshape(-1)
    _, J_logdet = btd.mahal_and_logdet(J, np.zeros_like(z))
    return -0.5 * (len(z) * LOG_2PI - J_logdet + float(z @ J.matvec(z)))


def posterior(ts: TimeSeries, p: LEGParams, jitter=0.0) -> PosteriorSummary:
    _, J_post, h, _, _ = _posterior_system(ts, p, jitter)
    d = btd.decompose(J_post)
    means = btd.solve(d, h).reshape(ts.n_times, p.rank)
    diag, lower = btd.inverse_blocks(d)
    return PosteriorSummary(means, diag, lower.transpose(0, 2, 1).copy())


def _bracket_moments(post, times, cache, t):
    """Mean and covariance of z(t) given the posterior at the observed times.

    Outside the observed range z(t) depends on the nearest latent only:
    forward, E[z(t) | z_m] = A z_m with A = exp(-d G / 2); backward the lag is
    negative so the kernel transposes, E[z(t) | z_1] = A^T z_1. Between t_i and
    t_{i+1} the prior joint of (z(t), z_i, z_{i+1}) is conditioned on the pair:

        K = [C(t - t_i), C(t - t_{i+1})] W^{-1},   W = Cov((z_i, z_{i+1}))
        z(t) | z_i, z_{i+1} ~ N(K (z_i, z_{i+1}), I - K [C(t - t_i), C(t - t_{i+1})]^T)

    and the pair's posterior is then integrated out.
    """
    ell = cache.dim
    eye = np.eye(ell)
    i = int(np.searchsorted(times, t))
    if i < len(times) and times[i] == t:
        return post.means[i], post.cov_diag[i]

    if i == len(times) or i == 0:
        j = i - 1 if i else 0
        gap = abs(t - times[j])
        A = matexp.expm_multi(None, [-0.5 * gap], cache)[0]
        if i == 0:
            A = A.T
        mean = A @ post.means[j]
        cov = A @ post.cov_diag[j] @ A.T + eye - A @ A.T
        return mean, 0.5 * (cov + cov.T)

    lo, hi = times[i - 1], times[i]
    A1, A2, A12 = matexp.expm_multi(None, -0.5 * np.array([t - lo, hi - t, hi - lo]), cache)
    cross = np.hstack([A1, A2.T])
    W = np.block([[eye, A12.T], [A12, eye]])
    K = linalg.solve(W, cross.T, assume_a='pos').T
    cond_cov = eye - K @ cross.T
    pair_mean = np.concatenate([post.means[i - 1], post.means[i]])
    pair_cov = np.block([[post.cov_diag[i - 1], post.cov_offdiag[i - 1]],
                         [post.cov_offdiag[i - 1].T, post.cov_diag[i]]])
    cov = cond_cov + K @ pair_cov @ K.T
    return K @ pair_mean, 0.5 * (cov + cov.T)


def predict_latent(ts: TimeSeries, p: LEGParams, targets, jitter=0.0) -> List[Tuple[np.ndarray, np.ndarray]]:
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if not np.isfinite(targets).all():
        raise ValueError('prediction targets must be finite')
    post = posterior(ts, p, jitter)
    cache = matexp.eigen_cache(p.G)
    return parallel.map_ordered(lambda t: _bracket_moments(post, ts.times, cache, t), targets)


def posterior_predictive(ts: TimeSeries, p: LEGParams, targets, jitter=0.0):
    """(mean, uncertainty, predictive_var) of x(t) for each target."""
    out = []
    for mean, cov in predict_latent(ts, p, targets, jitter):
        uncertainty = p.B @ cov @ p.B.T
        out.append((p.B @ mean, uncertainty, uncertainty + p.noise_cov))
    return out


class _NoiseStream:
    """Standard normals drawn from a Generator or read in order from an array."""

    def __init__(self, noise):
        if isinstance(noise, np.random.Generator):
            self._rng, self._flat, self._pos = noise, None, 0
        else:
            self._rng, self._flat, self._pos = None, np.asarray(noise, dtype=float).reshape(-1), 0

    def draw(self, shape):
        if self._rng is not None:
            return self._rng.standard_normal(shape)
        size = int(np.prod(shape))
        if self._pos + size > len(self._flat):
            raise ValueError(f'noise stream exhausted: needed {size} more values')
        out = self._flat[self._pos:self._pos + size].reshape(shape)
        self._pos += size
        return out


def simulate_peg(times, N, R, noise) -> np.ndarray:
    """Latent PEG path at sorted times, one row per time.

    z_1 = eps_1 and z_{i+1} = A_i z_i + chol(Q_i) eps_{i+1}, exact for any gap.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    if len(times) == 0:
        raise EmptyInput('no sample times')
    gaps = np.diff(times)
    if (gaps < 0).any():
        raise UnsortedInput('sample times must be sorted')
    stream = noise if isinstance(noise, _NoiseStream) else _NoiseStream(noise)
    ell = np.asarray(N).shape[0]
    eps = stream.draw((len(times), ell))
    z = np.empty((len(times), ell))
    z[0] = eps[0]
    if len(gaps):
        A, Q = transition(gaps, N, R)
        for i in range(len(gaps)):
            z[i + 1] = A[i] @ z[i] + psd_factor(Q[i]) @ eps[i + 1]
    return z


def simulate(times, p: LEGParams, noise) -> TimeSeries:
    """Draw observations at sorted (possibly repeated) times.

    Latent noise is consumed first, one l-vector per distinct time, then
    observation noise, one n-vector per row.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    if len(times) == 0:
        raise EmptyInput('no sample times')
    if (np.diff(times) < 0).any():
        raise UnsortedInput('sample times must be sorted')
    unique, idx = np.unique(times, return_inverse=True)
    stream = _NoiseStream(noise)
    z = simulate_peg(unique, p.N, p.R, stream)
    obs_noise = stream.draw((len(times), p.obs_dim))
    values = z[idx] @ p.B.T + obs_noise @ p.Lambda.T
    return TimeSeries(unique, values, idx)
