"""Reading and writing series CSVs and parameter JSON files.

CSVs carry a header ``t,x1,...,xn`` and doubles written with 17 significant
digits so values survive a write/read cycle exactly. The CSV writers
return the text instead of writing it when ``path`` is None.
"""
import io
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from rest_framework.exceptions import ParseError
from rest_framework.parsers import JSONParser
from rest_framework.renderers import JSONRenderer

from leggps.exceptions import InvalidInput
from leggps.kernel import LEGParams
from leggps.serializers import ParamsSerializer

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def read_series(path, sort=True):
    """Return (times, values) from a ``t,x1,...`` CSV.

    Unsorted rows are stably re-sorted by t with a warning when ``sort`` is
    set, else rejected.
    """
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise InvalidInput(f'{path}: cannot read CSV ({exc})') from exc
    if 't' not in frame.columns or len(frame.columns) < 2:
        raise InvalidInput(f'{path}: expected a header "t,x1,...,xn"')
    value_cols = [c for c in frame.columns if c != 't']
    try:
        times = frame['t'].to_numpy(dtype=float)
        values = frame[value_cols].to_numpy(dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f'{path}: non-numeric entries ({exc})') from exc
    if len(times) == 0:
        raise InvalidInput(f'{path}: no rows')
    if not (np.isfinite(times).all() and np.isfinite(values).all()):
        raise InvalidInput(f'{path}: missing or non-finite entries')
    if (np.diff(times) < 0).any():
        if not sort:
            raise InvalidInput(f'{path}: rows are not sorted by t')
        logger.warning('%s: rows are not sorted by t; sorting them', path)
        order = np.argsort(times, kind='stable')
        times, values = times[order], values[order]
    return times, values


def read_times(path):
    """Targets from a CSV with a ``t`` column (other columns ignored)."""
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise InvalidInput(f'{path}: cannot read CSV ({exc})') from exc
    if 't' not in frame.columns:
        raise InvalidInput(f'{path}: expected a "t" column')
    times = pd.to_numeric(frame['t'], errors='coerce').to_numpy(dtype=float)
    if len(times) == 0 or not np.isfinite(times).all():
        raise InvalidInput(f'{path}: "t" must hold finite numbers')
    return times


def write_series(path, times, values):
    values = np.asarray(values, dtype=float)
    frame = pd.DataFrame(values, columns=[f'x{j + 1}' for j in range(values.shape[1])])
    frame.insert(0, 't', np.asarray(times, dtype=float))
    return frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_bands(path, targets, means, sds):
    """``t, mean_1..mean_n, sd_1..sd_n`` rows, one per target."""
    means = np.asarray(means, dtype=float)
    sds = np.asarray(sds, dtype=float)
    n = means.shape[1]
    frame = pd.DataFrame(np.hstack([means, sds]),
                         columns=[f'mean_{j + 1}' for j in range(n)] + [f'sd_{j + 1}' for j in range(n)])
    frame.insert(0, 't', np.asarray(targets, dtype=float))
    return frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_table(path, rows, columns):
    return pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_json(path):
    try:
        raw = Path(path).read_bytes()
        return JSONParser().parse(io.BytesIO(raw))
    except OSError as exc:
        raise InvalidInput(f'{path}: cannot read ({exc})') from exc
    except ParseError as exc:
        raise InvalidInput(f'{path}: {exc.detail}') from exc


def write_json(path, data):
    Path(path).write_bytes(JSONRenderer().render(data) + b'\n')


def read_params(path) -> LEGParams:
    serializer = ParamsSerializer(data=read_json(path))
    if not serializer.is_valid():
        raise InvalidInput(f'{path}: invalid parameters {serializer.errors}')
    return serializer.validated_data['params']


def write_params(path, p: LEGParams, meta=None):
    write_json(path, ParamsSerializer.from_params(p, meta).data)
