import numpy as np
import pytest

from leggps import parallel
from leggps.btd import BlockTridiag
from leggps.files import write_params, write_series
from leggps.inference import dedup
from leggps.kernel import LEGParams


def make_spd_btd(rng, m, ell):
    """Random block-diagonally dominant (hence SPD) block-tridiagonal matrix."""
    off = rng.normal(size=(m - 1, ell, ell))
    norms = np.zeros(m)
    if m > 1:
        off_norms = np.linalg.norm(off, ord=2, axis=(1, 2))
        norms[1:] += off_norms
        norms[:-1] += off_norms
    A = rng.normal(size=(m, ell, ell))
    diag = A @ A.transpose(0, 2, 1) + (norms + 1.0)[:, None, None] * np.eye(ell)
    return BlockTridiag(diag, off)


def make_params(rng, ell, n):
    return LEGParams(
        N=np.eye(ell) + 0.3 * rng.normal(size=(ell, ell)),
        R=0.5 * rng.normal(size=(ell, ell)),
        B=rng.normal(size=(n, ell)),
        Lambda=0.4 * np.eye(n) + 0.1 * np.tril(rng.normal(size=(n, n))),
    )


def make_times(rng, m, lo=0.1, hi=1.0):
    return np.cumsum(rng.uniform(lo, hi, size=m))


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def ou_params():
    """Scalar OU kernel e^{-|tau|} observed with noise 0.1."""
    return LEGParams(N=[[np.sqrt(2.0)]], R=[[0.0]], B=[[1.0]], Lambda=[[0.1]])


@pytest.fixture
def small_series(rng):
    times = make_times(rng, 12)
    values = rng.normal(size=(12, 2))
    return dedup(times, values)


@pytest.fixture
def params_2x2(rng):
    return make_params(rng, 2, 2)


@pytest.fixture
def series_csv(tmp_path, small_series):
    path = tmp_path / 'series.csv'
    write_series(path, small_series.raw_times, small_series.values)
    return path


@pytest.fixture
def params_json(tmp_path, params_2x2):
    path = tmp_path / 'params.json'
    write_params(path, params_2x2)
    return path


@pytest.fixture(autouse=True)
def reset_pool():
    yield
    parallel.configure(None)
