"""Maximum-likelihood fitting of LEG parameters.

The objective is the total negative log-likelihood (nats) of independent
series. Its gradient is taken by central finite differences over the flat
parameter vector, and scipy's BFGS drives the search. The returned
parameters are always the best ones ever evaluated, whatever the optimizer
reports.
"""
import enum
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy import optimize

from leggps import parallel
from leggps.exceptions import EmptyInput, DimensionMismatch, LegError, NonFiniteObjective
from leggps.inference import TimeSeries, log_likelihood
from leggps.kernel import LEGParams

logger = logging.getLogger(__name__)

R_INIT_STD = np.sqrt(0.2)
LAMBDA_INIT = 0.1
MAX_STEP_HALVINGS = 5


class FitStatus(str, enum.Enum):
    CONVERGED = 'Converged'
    MAX_ITER = 'MaxIter'
    LINE_SEARCH_FAILURE = 'LineSearchFailure'


@dataclass(frozen=True)
class FitConfig:
    rank: int
    max_iter: int = 200
    grad_tol: float = 1e-6
    seed: int = 0
    diag_lambda: bool = False
    fd_step: float = 1e-6
    jitter: float = 0.0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError('rank must be at least 1')
        if self.max_iter < 1:
            raise ValueError('max_iter must be at least 1')
        if not self.fd_step > 0:
            raise ValueError('fd_step must be positive')
        if self.jitter < 0:
            raise ValueError('jitter must be nonnegative')


@dataclass
class FitResult:
    params: LEGParams
    nats_trajectory: List[float]
    final_nats: float
    grad_norm: float
    n_obj_evals: int
    n_grad_evals: int
    status: FitStatus
    message: str = ''
    n_obs: int = field(default=0)

    @property
    def nats_per_observation(self):
        return self.final_nats / self.n_obs if self.n_obs else float('nan')


def init_params(ell, n, seed) -> LEGParams:
    """N = I, R ~ N(0, 0.2) entrywise, B ~ N(0, 1/l) entrywise, Lambda = 0.1 I."""
    if ell < 1 or n < 1:
        raise ValueError('rank and observation dimension must be at least 1')
    rng = np.random.default_rng(seed)
    R = rng.normal(0.0, R_INIT_STD, size=(ell, ell))
    B = rng.normal(0.0, 1 / np.sqrt(ell), size=(n, ell))
    return LEGParams(N=np.eye(ell), R=R, B=B, Lambda=LAMBDA_INIT * np.eye(n))


def pack(p: LEGParams, diag_lambda=False) -> np.ndarray:
    """Row-major N, then R, then B, then Lambda (its diagonal only when diag_lambda)."""
    lam = np.diag(p.Lambda) if diag_lambda else p.Lambda.ravel()
    return np.concatenate([p.N.ravel(), p.R.ravel(), p.B.ravel(), lam])


def unpack(theta, ell, n, diag_lambda=False) -> LEGParams:
    theta = np.asarray(theta, dtype=float)
    expected = 2 * ell * ell + n * ell + (n if diag_lambda else n * n)
    if theta.shape != (expected,):
        raise DimensionMismatch(f'expected {expected} parameters, got shape {theta.shape}')
    sizes = np.cumsum([ell * ell, ell * ell, n * ell])
    N, R, B, lam = np.split(theta, sizes)
    Lambda = np.diag(lam) if diag_lambda else lam.reshape(n, n)
    return LEGParams(N=N.reshape(ell, ell), R=R.reshape(ell, ell), B=B.reshape(n, ell), Lambda=Lambda)


def _as_list(series) -> List[TimeSeries]:
    if isinstance(series, TimeSeries):
        series = [series]
    series = list(series)
    if not series:
        raise EmptyInput('no series to fit')
    dims = {ts.obs_dim for ts in series}
    if len(dims) != 1:
        raise DimensionMismatch(f'series have different observation dimensions: {sorted(dims)}')
    return series


def objective(series: Sequence[TimeSeries], p: LEGParams, jitter=0.0) -> float:
    """Total nats, -sum of per-series log-likelihoods (pairwise summed)."""
    series = _as_list(series)
    nats = -np.sum(np.array([log_likelihood(ts, p, jitter) for ts in series]))
    logger.debug('objective %.6f nats, %.6f nats/obs', nats, nats / sum(ts.n_obs for ts in series))
    return float(nats)


def _objective_or_nan(series, theta, ell, n, cfg):
    try:
        value = objective(series, unpack(theta, ell, n, cfg.diag_lambda), cfg.jitter)
    except LegError:
        return np.nan
    return value


def gradient(series: Sequence[TimeSeries], p: LEGParams, cfg: FitConfig) -> np.ndarray:
    """Central finite differences with step fd_step * (1 + |theta_i|).

    A coordinate whose neighbouring values are not finite has its step halved, at most
    five times.
    """
    series = _as_list(series)
    theta = pack(p, cfg.diag_lambda)
    ell, n = p.rank, p.obs_dim

    def coordinate(i):
        h = cfg.fd_step * (1.0 + abs(theta[i]))
        for _ in range(MAX_STEP_HALVINGS + 1):
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            f_up = _objective_or_nan(series, up, ell, n, cfg)
            f_down = _objective_or_nan(series, down, ell, n, cfg)
            if np.isfinite(f_up) and np.isfinite(f_down):
                return (f_up - f_down) / (2 * h)
            h /= 2
        raise NonFiniteObjective(f'objective is not finite around parameter {i}')

    return np.array(parallel.map_ordered(coordinate, range(len(theta))))


class _Tracker:
    """Counts evaluations and remembers the best and the latest point seen."""

    def __init__(self, series, ell, n, cfg):
        self.series, self.ell, self.n, self.cfg = series, ell, n, cfg
        self.last_value = (None, None)
        self.last_grad = (None, None)
        self.n_obj = 0
        self.n_grad = 0
        self.best_theta = None
        self.best_value = np.inf
        self.trajectory = []

    def record(self, theta, value):
        self.n_obj += 1
        value = value if np.isfinite(value) else np.inf
        self.last_value = (theta.tobytes(), value)
        if value < self.best_value:
            self.best_value, self.best_theta = value, theta.copy()
        return value

    def cached_value(self, theta):
        key = theta.tobytes()
        if key == self.last_value[0]:
            return self.last_value[1]
        if self.best_theta is not None and key == self.best_theta.tobytes():
            return self.best_value
        return None

    def fun(self, theta):
        cached = self.cached_value(theta)
        if cached is not None:
            return cached
        try:
            value = objective(self.series, unpack(theta, self.ell, self.n, self.cfg.diag_lambda),
                              self.cfg.jitter)
        except LegError as exc:
            logger.debug('objective failed at trial point: %s', exc)
            value = np.inf
        return self.record(theta, value)

    def jac(self, theta):
        key = theta.tobytes()
        if key != self.last_grad[0]:
            self.n_grad += 1
            p = unpack(theta, self.ell, self.n, self.cfg.diag_lambda)
            self.last_grad = (key, gradient(self.series, p, self.cfg))
        return self.last_grad[1]

    def callback(self, theta):
        value = self.fun(theta)
        self.trajectory.append(value)
        key, grad = self.last_grad
        gnorm = np.abs(grad).max() if key == theta.tobytes() else float('nan')
        n_obs = sum(ts.n_obs for ts in self.series)
        logger.info('iteration %d: %.6f nats (%.6f nats/obs), |grad| %.3g',
                    len(self.trajectory) - 1, value, value / n_obs, gnorm)


def fit(series: Sequence[TimeSeries], cfg: FitConfig, init: Optional[LEGParams] = None) -> FitResult:
    series = _as_list(series)
    n = series[0].obs_dim
    p0 = init if init is not None else init_params(cfg.rank, n, cfg.seed)
    if p0.rank != cfg.rank or p0.obs_dim != n:
        raise DimensionMismatch(
            f'initial parameters have rank {p0.rank} and {p0.obs_dim} outputs, '
            f'expected rank {cfg.rank} and {n} outputs')
    if cfg.diag_lambda and np.count_nonzero(p0.Lambda - np.diag(np.diag(p0.Lambda))):
        raise DimensionMismatch('initial Lambda has off-diagonal entries but diag_lambda is set')
    ell = p0.rank
    theta0 = pack(p0, cfg.diag_lambda)

    tracker = _Tracker(series, ell, n, cfg)
    start = objective(series, unpack(theta0, ell, n, cfg.diag_lambda), cfg.jitter)
    if not np.isfinite(start):
        raise NonFiniteObjective('objective is not finite at the initial parameters')
    tracker.record(theta0, start)
    tracker.trajectory.append(start)

    try:
        res = optimize.minimize(
            tracker.fun, theta0, jac=tracker.jac, method='BFGS', callback=tracker.callback,
            options={'gtol': cfg.grad_tol, 'maxiter': cfg.max_iter, 'norm': np.inf},
        )
        status = {0: FitStatus.CONVERGED, 1: FitStatus.MAX_ITER}.get(
            res.status, FitStatus.LINE_SEARCH_FAILURE)
        message = str(res.message)
    except LegError as exc:
        logger.warning('optimization aborted: %s', exc)
        status, message = FitStatus.LINE_SEARCH_FAILURE, str(exc)

    best = unpack(tracker.best_theta, ell, n, cfg.diag_lambda)
    try:
        grad_norm = float(np.abs(tracker.jac(tracker.best_theta)).max())
    except LegError:
        grad_norm = float('nan')
    if status is not FitStatus.CONVERGED and grad_norm <= cfg.grad_tol:
        status = FitStatus.CONVERGED
    logger.info('fit finished (%s): %.6f nats after %d objective evaluations',
                status.value, tracker.best_value, tracker.n_obj)
    return FitResult(
        params=best,
        nats_trajectory=tracker.trajectory,
        final_nats=float(tracker.best_value),
        grad_norm=grad_norm,
        n_obj_evals=tracker.n_obj,
        n_grad_evals=tracker.n_grad,
        status=status,
        message=message,
        n_obs=sum(ts.n_obs for ts in series),
    )


def fit_restarts(series: Sequence[TimeSeries], cfg: FitConfig, restarts=1,
                 init: Optional[LEGParams] = None) -> FitResult:
    """Best of ``restarts`` fits seeded cfg.seed, cfg.seed + 1, ...

    ``init`` only seeds the first run.
    """
    if restarts < 1:
        raise ValueError('restarts must be at least 1')
    best = None
    for k in range(restarts):
        result = fit(series, replace(cfg, seed=cfg.seed + k), init if k == 0 else None)
        logger.info('restart %d: %.6f nats (%s)', k, result.final_nats, result.status.value)
        if best is None or result.final_nats < best.final_nats:
            best = result
    return best
