import io
import json
import logging

import numpy as np
import pandas as pd
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from leggps import files, kernel
from leggps.inference import dedup, log_likelihood, posterior_predictive, simulate
from leggps.kernel import LEGParams
from leggps.management.commands.bench import loglog_slope


def run(name, *args):
    out, err = io.StringIO(), io.StringIO()
    call_command(name, *args, stdout=out, stderr=err)
    return out.getvalue(), err.getvalue()


def returncode(name, *args):
    with pytest.raises(CommandError) as info:
        run(name, *args)
    return info.value.returncode


@pytest.fixture
def ou_json(tmp_path, ou_params):
    path = tmp_path / 'ou.json'
    files.write_params(path, ou_params)
    return path


@pytest.fixture
def ou_csv(tmp_path, ou_params):
    ts = simulate(0.2 * np.arange(40), ou_params, np.random.default_rng(1))
    path = tmp_path / 'ou.csv'
    files.write_series(path, ts.raw_times, ts.values)
    return path


def test_fit_rejects_rank_zero(series_csv, tmp_path):
    assert returncode('fit', str(series_csv), '--rank', '0', '-o', str(tmp_path / 'p.json')) == 2


def test_fit_needs_an_input(tmp_path):
    assert returncode('fit', '--rank', '1', '-o', str(tmp_path / 'p.json')) == 2


def test_fit_writes_params_and_trace(ou_csv, tmp_path):
    out = tmp_path / 'fitted.json'
    _, err = run('fit', str(ou_csv), '--input', str(ou_csv), '--rank', '1', '--max-iter', '5', '-o', str(out))
    p = files.read_params(out)
    assert (p.rank, p.obs_dim) == (1, 1)
    meta = json.loads(out.read_text())['meta']
    assert meta['rank'] == 1
    trace = json.loads((tmp_path / 'fitted.json.trace.json').read_text())
    assert trace['final_nats'] == pytest.approx(meta['final_nats'])
    assert trace['status'] in {'Converged', 'MaxIter', 'LineSearchFailure'}
    assert trace['status'] in err


def test_smooth_schema(series_csv, params_json, small_series):
    out, _ = run('smooth', str(series_csv), str(params_json))
    frame = pd.read_csv(io.StringIO(out))
    assert list(frame.columns) == ['t', 'mean_1', 'mean_2', 'sd_1', 'sd_2']
    np.testing.assert_allclose(frame['t'], small_series.times)
    assert (frame[['sd_1', 'sd_2']] >= 0).all().all()


def test_forecast_matches_library(series_csv, params_json, small_series, params_2x2, tmp_path):
    last = small_series.times[-1]
    targets = f'{last + 0.5},{last + 1.0}'
    output = tmp_path / 'forecast.csv'
    run('forecast', str(series_csv), str(params_json), '--targets', targets, '-o', str(output))
    frame = pd.read_csv(output, float_precision='round_trip')

    preds = posterior_predictive(small_series, params_2x2, [last + 0.5, last + 1.0])
    np.testing.assert_array_equal(frame[['mean_1', 'mean_2']].to_numpy(), [m for m, _, _ in preds])
    np.testing.assert_array_equal(frame[['sd_1', 'sd_2']].to_numpy(),
                                  [np.sqrt(np.diag(cov)) for _, _, cov in preds])


def test_forecast_needs_targets(series_csv, params_json):
    assert returncode('forecast', str(series_csv), str(params_json)) == 2


def test_forecast_targets_file(series_csv, params_json, tmp_path):
    targets = tmp_path / 'targets.csv'
    targets.write_text('t\n100\n101\n')
    out, _ = run('forecast', str(series_csv), str(params_json), '--targets-file', str(targets))
    assert len(pd.read_csv(io.StringIO(out))) == 2


def test_loglik_json(series_csv, params_json, small_series, params_2x2):
    out, _ = run('loglik', str(series_csv), str(params_json))
    report = json.loads(out)
    expected = log_likelihood(small_series, params_2x2)
    assert report['log_likelihood'] == pytest.approx(expected, rel=1e-12)
    assert report['nats'] == pytest.approx(-expected, rel=1e-12)
    assert report['n_obs'] == 12
    assert report['nats_per_observation'] == pytest.approx(-expected / 12, rel=1e-12)


def test_converted_celerite_matches_hand_written_ou(ou_csv, ou_json, tmp_path):
    converted = tmp_path / 'celerite.json'
    run('convert', '--celerite', '1,0,1,0', '--noise', '0.1', '-o', str(converted))
    meta = json.loads(converted.read_text())['meta']
    assert meta['source'] == 'celerite'
    assert meta['verify_error'] <= 1e-8

    via_convert = json.loads(run('loglik', str(ou_csv), str(converted))[0])
    by_hand = json.loads(run('loglik', str(ou_csv), str(ou_json))[0])
    assert via_convert['log_likelihood'] == pytest.approx(by_hand['log_likelihood'], rel=1e-6)


def test_convert_spectral_mixture(tmp_path):
    out = tmp_path / 'sm.json'
    run('convert', '--sm', '1,0,2,1', '--sm', '0.5,0.5,0,3', '-o', str(out))
    p = files.read_params(out)
    assert p.rank == 4
    np.testing.assert_array_equal(p.Lambda, [[0.0]])


def test_convert_not_positive_definite_term(tmp_path):
    assert returncode('convert', '--celerite', '1,3,1,1', '-o', str(tmp_path / 'bad.json')) == 3


def test_convert_needs_one_family(tmp_path):
    assert returncode('convert', '-o', str(tmp_path / 'none.json')) == 2
    assert returncode('convert', '--celerite', '1,0,1,0', '--sm', '1,0,1,1',
                      '-o', str(tmp_path / 'both.json')) == 2


def test_simulate_schema(params_json, tmp_path):
    out, _ = run('simulate', str(params_json), '--times', '0:2:0.5', '--seed', '3')
    frame = pd.read_csv(io.StringIO(out))
    assert list(frame.columns) == ['t', 'x1', 'x2']
    np.testing.assert_allclose(frame['t'], [0.0, 0.5, 1.0, 1.5, 2.0])
    again, _ = run('simulate', str(params_json), '--times', '0:2:0.5', '--seed', '3')
    assert again == out


def test_simulate_zero_noise_params(tmp_path):
    path = tmp_path / 'zero.json'
    files.write_params(path, LEGParams(N=[[1.0]], R=[[0.0]], B=[[0.0]], Lambda=[[0.0]]))
    out, _ = run('simulate', str(path), '--times', '1,2,3')
    np.testing.assert_array_equal(pd.read_csv(io.StringIO(out))['x1'], 0.0)


def test_bench_schema():
    out, err = run('bench', '--rank', '1', '--sizes', '16,32', '--repeats', '1')
    frame = pd.read_csv(io.StringIO(out))
    assert list(frame.columns) == ['m', 'median_seconds']
    assert list(frame['m']) == [16, 32]
    assert (frame['median_seconds'] > 0).all()
    assert 'slope' in err


def test_unsorted_csv_is_sorted(tmp_path, params_json):
    path = tmp_path / 'unsorted.csv'
    path.write_text('t,x1,x2\n2,0.1,0.2\n1,0.3,0.4\n3,0.5,0.6\n')
    out, _ = run('smooth', str(path), str(params_json))
    np.testing.assert_allclose(pd.read_csv(io.StringIO(out))['t'], [1.0, 2.0, 3.0])

    times, values = files.read_series(path)
    np.testing.assert_array_equal(values[0], [0.3, 0.4])
    loglik = json.loads(run('loglik', str(path), str(params_json))[0])['log_likelihood']
    assert loglik == pytest.approx(log_likelihood(dedup(times, values), files.read_params(params_json)))


def test_parse_errors_exit_with_two(tmp_path, params_json):
    bad = tmp_path / 'bad.csv'
    bad.write_text('t,x1,x2\n1,abc,0.2\n')
    assert returncode('loglik', str(bad), str(params_json)) == 2

    broken = tmp_path / 'broken.json'
    broken.write_text('{"N": [[1.0]]')
    assert returncode('simulate', str(broken), '--times', '0,1') == 2

    assert returncode('loglik', str(tmp_path / 'missing.csv'), str(params_json)) == 2


def test_dimension_mismatch_exits_with_two(ou_csv, params_json):
    assert returncode('loglik', str(ou_csv), str(params_json)) == 2


def test_singular_noise_exits_with_three(tmp_path):
    params = tmp_path / 'noiseless.json'
    files.write_params(params, LEGParams(N=[[1.0]], R=[[0.0]], B=[[1.0]], Lambda=[[0.0]]))
    series = tmp_path / 'series.csv'
    series.write_text('t,x1\n0,0.2\n1,0.1\n')
    assert returncode('loglik', str(series), str(params)) == 3
    assert json.loads(run('loglik', str(series), str(params), '--jitter', '0.01')[0])['n_obs'] == 2


def test_series_csv_round_trips_exactly(tmp_path, rng):
    times = np.sort(rng.uniform(0.0, 100.0, size=200))
    values = rng.normal(size=(200, 3)) * 10.0 ** rng.integers(-12, 12, size=(200, 3))
    path = tmp_path / 'doubles.csv'
    files.write_series(path, times, values)
    back_times, back_values = files.read_series(path)
    np.testing.assert_array_equal(back_times, times)
    np.testing.assert_array_equal(back_values, values)

    files.write_series(path, times, values[:, :1])
    np.testing.assert_array_equal(files.read_times(path), times)


def test_fit_rejects_full_init_lambda_with_diag_lambda(tmp_path, series_csv):
    init = tmp_path / 'init.json'
    files.write_params(init, LEGParams(N=[[1.0]], R=[[0.0]], B=[[1.0], [0.5]],
                                       Lambda=[[0.5, 0.0], [0.45, 0.2]]))
    assert returncode('fit', str(series_csv), '--rank', '1', '--diag-lambda', '--init', str(init),
                      '-o', str(tmp_path / 'p.json')) == 2


def test_verbose_level_does_not_leak(series_csv, params_json):
    logger = logging.getLogger('leggps')
    before = logger.level
    run('loglik', str(series_csv), str(params_json), '--verbose')
    assert logger.level == before
    returncode('loglik', str(series_csv), str(params_json), '--verbose', '--threads', '0')
    assert logger.level == before


@pytest.mark.slow
def test_simulate_fit_smooth_loglik_pipeline(ou_json, ou_params, tmp_path):
    series = tmp_path / 'simulated.csv'
    run('simulate', str(ou_json), '--times', '0:199.9:0.1', '--seed', '11', '-o', str(series))
    fitted = tmp_path / 'fitted.json'
    run('fit', str(series), '--rank', '1', '--restarts', '2', '-o', str(fitted))

    p = files.read_params(fitted)
    taus = np.linspace(0.0, 3.0, 61)
    recovered = kernel.c_leg_many(taus, p)[:, 0, 0]
    true = kernel.c_leg_many(taus, ou_params)[:, 0, 0]
    assert np.abs(recovered - true).max() <= 0.05 * true[0]

    out, _ = run('smooth', str(series), str(fitted))
    assert len(pd.read_csv(io.StringIO(out))) == len(pd.read_csv(series))

    at_fit = json.loads(run('loglik', str(series), str(fitted))[0])
    at_truth = json.loads(run('loglik', str(series), str(ou_json))[0])
    assert at_fit['log_likelihood'] >= at_truth['log_likelihood'] - 1e-6
    assert at_fit['log_likelihood'] == pytest.approx(-json.loads(fitted.read_text())['meta']['final_nats'])


@pytest.mark.slow
def test_bench_scales_linearly():
    out, _ = run('bench', '--rank', '3', '--sizes', '2^14..2^20', '--repeats', '3')
    frame = pd.read_csv(io.StringIO(out))
    assert list(frame['m']) == [2 ** k for k in range(14, 21)]
    assert 0.8 <= loglog_slope(frame['m'], frame['median_seconds']) <= 1.15
