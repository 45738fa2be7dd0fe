import numpy as np
import pytest
from scipy import stats

from leggps import inference, kernel
from leggps.conftest import make_params, make_times
from leggps.exceptions import DimensionMismatch, EmptyInput, SingularNoise, UnsortedInput
from leggps.inference import TimeSeries, dedup
from leggps.kernel import LEGParams


def observation_matrix(ts, p):
    H = np.zeros((ts.n_obs * p.obs_dim, ts.n_times * p.rank))
    n, ell = p.obs_dim, p.rank
    for k, i in enumerate(ts.idx):
        H[k * n:(k + 1) * n, i * ell:(i + 1) * ell] = p.B
    return H


def dense_moments(ts, p, targets=()):
    """Dense conditional moments of the latents at ts.times followed by targets."""
    all_times = np.concatenate([ts.times, np.asarray(targets, dtype=float)])
    prior = kernel.peg_gram(all_times, p.N, p.R)
    H = np.zeros((ts.n_obs * p.obs_dim, len(all_times) * p.rank))
    H[:, :ts.n_times * p.rank] = observation_matrix(ts, p)
    S = H @ prior @ H.T + np.kron(np.eye(ts.n_obs), p.noise_cov)
    K = prior @ H.T @ np.linalg.inv(S)
    mean = K @ ts.values.ravel()
    cov = prior - K @ H @ prior
    return mean.reshape(-1, p.rank), cov


def random_series(rng, m, n, repeats=True):
    times = make_times(rng, m, 0.05, 1.0)
    if repeats and m > 3:
        times[2] = times[1]
    return dedup(times, rng.normal(size=(m, n)))


def test_dedup_examples():
    ts = dedup([1.0, 2.0, 3.0], [[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(ts.idx, [0, 1, 2])
    ts = dedup([1.0, 1.0, 2.0], [[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(ts.times, [1.0, 2.0])
    np.testing.assert_array_equal(ts.idx, [0, 0, 1])
    with pytest.raises(UnsortedInput):
        dedup([2.0, 1.0], [[1.0], [2.0]])
    with pytest.raises(EmptyInput):
        dedup([], np.zeros((0, 1)))


def test_time_series_validation():
    with pytest.raises(UnsortedInput):
        TimeSeries([1.0, 1.0], [[0.0], [0.0]], [0, 1])
    with pytest.raises(DimensionMismatch):
        TimeSeries([1.0, 2.0], [[0.0], [0.0]], [0])


def test_single_point_likelihood():
    lam, x = 0.5, 0.7
    p = LEGParams(N=[[1.3]], R=[[0.0]], B=[[1.0]], Lambda=[[lam]])
    ll = inference.log_likelihood(dedup([0.0], [[x]]), p)
    assert ll == pytest.approx(stats.norm.logpdf(x, scale=np.sqrt(1 + lam ** 2)), abs=1e-12)


@pytest.mark.parametrize('seed', range(20))
def test_likelihood_matches_dense_gaussian(seed):
    rng = np.random.default_rng(seed)
    m, ell, n = int(rng.integers(2, 51)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
    p = make_params(rng, ell, n)
    ts = random_series(rng, m, n)
    gram = kernel.leg_gram(ts.raw_times, p)
    expected = stats.multivariate_normal.logpdf(ts.values.ravel(), cov=gram)
    assert inference.log_likelihood(ts, p) == pytest.approx(expected, abs=1e-6)


def test_well_separated_points_factorize():
    p = LEGParams(N=np.sqrt(2) * np.eye(2), R=np.zeros((2, 2)), B=[[1.0, 0.5]], Lambda=[[0.3]])
    x = np.array([[0.4], [-1.1]])
    joint = inference.log_likelihood(dedup([0.0, 50.0], x), p)
    singles = sum(inference.log_likelihood(dedup([0.0], x[k:k + 1]), p) for k in range(2))
    assert joint == pytest.approx(singles, abs=1e-6)


def test_singular_noise_needs_jitter(rng):
    p = LEGParams(N=[[1.0]], R=[[0.0]], B=[[1.0]], Lambda=[[0.0]])
    ts = dedup([0.0, 1.0], [[0.2], [0.1]])
    with pytest.raises(SingularNoise):
        inference.log_likelihood(ts, p)
    jittered = inference.log_likelihood(ts, p, jitter=0.01)
    gram = kernel.leg_gram(ts.raw_times, p) + 0.01 * np.eye(2)
    assert jittered == pytest.approx(stats.multivariate_normal.logpdf([0.2, 0.1], cov=gram), abs=1e-8)


def test_series_dimension_must_match(params_2x2):
    with pytest.raises(DimensionMismatch):
        inference.log_likelihood(dedup([0.0, 1.0], [[1.0], [2.0]]), params_2x2)


def test_zero_observations_give_zero_mean(rng):
    p = make_params(rng, 3, 2)
    ts = dedup(make_times(rng, 10), np.zeros((10, 2)))
    np.testing.assert_allclose(inference.posterior(ts, p).means, 0.0, atol=1e-14)


def test_scalar_posterior():
    sigma, x = 0.6, 1.4
    p = LEGParams(N=[[1.0]], R=[[0.0]], B=[[1.0]], Lambda=[[sigma]])
    post = inference.posterior(dedup([3.0], [[x]]), p)
    assert post.means[0, 0] == pytest.approx(x / (1 + sigma ** 2))
    assert post.cov_diag[0, 0, 0] == pytest.approx(sigma ** 2 / (1 + sigma ** 2))


@pytest.mark.parametrize('seed', range(20))
def test_posterior_matches_dense_conditioning(seed):
    rng = np.random.default_rng(100 + seed)
    ell, n = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    p = make_params(rng, ell, n)
    ts = random_series(rng, 40, n)
    post = inference.posterior(ts, p)
    mean, cov = dense_moments(ts, p)

    np.testing.assert_allclose(post.means, mean, atol=1e-6)
    for i in range(ts.n_times):
        block = cov[i * ell:(i + 1) * ell, i * ell:(i + 1) * ell]
        np.testing.assert_allclose(post.cov_diag[i], block, atol=1e-6)
        assert np.linalg.eigvalsh(post.cov_diag[i]).min() >= -1e-8
    for i in range(ts.n_times - 1):
        block = cov[i * ell:(i + 1) * ell, (i + 1) * ell:(i + 2) * ell]
        np.testing.assert_allclose(post.cov_offdiag[i], block, atol=1e-6)


def test_prediction_at_observed_times_matches_posterior(rng):
    p = make_params(rng, 2, 2)
    ts = random_series(rng, 15, 2)
    post = inference.posterior(ts, p)
    preds = inference.predict_latent(ts, p, ts.times)
    for i, (mean, cov) in enumerate(preds):
        np.testing.assert_allclose(mean, post.means[i], atol=1e-9)
        np.testing.assert_allclose(cov, post.cov_diag[i], atol=1e-9)


def test_far_future_reverts_to_prior(rng):
    p = make_params(rng, 2, 1)
    ts = random_series(rng, 10, 1)
    (mean, cov), = inference.predict_latent(ts, p, [ts.times[-1] + 1e6])
    np.testing.assert_allclose(mean, 0.0, atol=1e-6)
    np.testing.assert_allclose(cov, np.eye(2), atol=1e-6)


@pytest.mark.parametrize('seed', range(20))
def test_out_of_sample_prediction_matches_dense_conditioning(seed):
    rng = np.random.default_rng(200 + seed)
    ell, n = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    p = make_params(rng, ell, n)
    ts = random_series(rng, 10, n)
    targets = [
        0.5 * (ts.times[3] + ts.times[4]),
        ts.times[-1] + 0.8,
        ts.times[0] - 0.6,
    ]
    preds = inference.predict_latent(ts, p, targets)
    mean, cov = dense_moments(ts, p, targets)
    for k, (got_mean, got_cov) in enumerate(preds):
        i = ts.n_times + k
        np.testing.assert_allclose(got_mean, mean[i], atol=1e-6)
        np.testing.assert_allclose(got_cov, cov[i * ell:(i + 1) * ell, i * ell:(i + 1) * ell], atol=1e-6)


def test_posterior_predictive_adds_noise(rng):
    p = make_params(rng, 3, 2)
    ts = random_series(rng, 30, 2)
    preds = inference.posterior_predictive(ts, p, ts.times)
    mean, cov = dense_moments(ts, p)
    for i, (x_mean, uncertainty, predictive) in enumerate(preds):
        np.testing.assert_allclose(predictive - uncertainty, p.noise_cov, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(x_mean, p.B @ mean[i], atol=1e-6)
        np.testing.assert_allclose(uncertainty, p.B @ cov[i * 3:(i + 1) * 3, i * 3:(i + 1) * 3] @ p.B.T,
                                   atol=1e-6)

    (_, _, far), = inference.posterior_predictive(ts, p, [ts.times[-1] + 1e6])
    np.testing.assert_allclose(far, p.B @ p.B.T + p.noise_cov, atol=1e-6)


def test_peg_log_density_matches_dense(rng):
    N, R = np.eye(2) + 0.2 * rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    times = make_times(rng, 12)
    z = rng.normal(size=(12, 2))
    expected = stats.multivariate_normal.logpdf(z.ravel(), cov=kernel.peg_gram(times, N, R))
    assert inference.peg_log_density(times, N, R, z) == pytest.approx(expected, abs=1e-8)


def test_nats_per_observation(rng):
    p = make_params(rng, 2, 1)
    ts = random_series(rng, 20, 1)
    nats = inference.nats_per_observation(ts, p)
    assert nats == pytest.approx(-inference.log_likelihood(ts, p) / 20)
    assert inference.nats_per_observation([ts, ts], p) == pytest.approx(nats)


def test_zero_noise_simulation_is_zero(params_2x2):
    times = [0.0, 0.5, 0.5, 2.0]
    ts = inference.simulate(times, params_2x2, np.zeros(3 * 2 + 4 * 2))
    np.testing.assert_array_equal(ts.values, 0.0)


def test_repeated_time_shares_latent(rng):
    p = LEGParams(N=np.eye(2), R=np.zeros((2, 2)), B=rng.normal(size=(1, 2)), Lambda=[[0.0]])
    ts = inference.simulate([0.0, 1.0, 1.0, 2.5], p, np.random.default_rng(3))
    np.testing.assert_array_equal(ts.idx, [0, 1, 1, 2])
    assert ts.values[1, 0] == ts.values[2, 0]


def test_simulate_rejects_unsorted(params_2x2):
    with pytest.raises(UnsortedInput):
        inference.simulate([1.0, 0.0], params_2x2, np.random.default_rng(0))


def test_exhausted_noise_stream(params_2x2):
    with pytest.raises(ValueError):
        inference.simulate([0.0, 1.0], params_2x2, np.zeros(3))


@pytest.mark.parametrize('tau', [0.5, 1.0])
def test_simulated_moments_match_kernel(tau):
    rng = np.random.default_rng(11)
    N = np.array([[1.0, 0.0], [0.4, 0.8]])
    R = np.array([[0.0, 0.7], [0.0, 0.0]])
    paths = np.array([inference.simulate_peg([0.0, tau], N, R, rng) for _ in range(10000)])
    empirical = paths[:, 1, :].T @ paths[:, 0, :] / len(paths)
    expected = kernel.c_peg(tau, N, R)
    se = np.sqrt((1 + expected ** 2) / len(paths))
    assert (np.abs(empirical - expected) < 5 * se).all()
