"""Worker pool shared by the block-level stage work and finite-difference gradients.

Work is split into contiguous chunks along the leading (block) axis and the
chunk results are concatenated in order, so results do not depend on the
number of workers.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

logger = logging.getLogger(__name__)

_threads = None


def configure(threads):
    """Cap the worker pool; ``None`` restores the settings/environment default."""
    global _threads
    if threads is not None and int(threads) < 1:
        raise ValueError('threads must be at least 1')
    _threads = None if threads is None else int(threads)


def _settings_value(name, default):
    from django.conf import settings

    if not settings.configured:
        return default
    return getattr(settings, name, default)


def worker_count():
    if _threads is not None:
        return _threads
    env_default = int(os.environ.get('LEG_THREADS', '1'))
    return max(1, int(_settings_value('LEG_THREADS', env_default)))


def min_blocks():
    return int(_settings_value('LEGGPS', {}).get('PARALLEL_MIN_BLOCKS', 4096))


def map_blocks(fn, *arrays):
    """Apply ``fn`` to aligned chunks of ``arrays`` and stack the results.

    ``fn`` must act on each block independently; it may return one array or
    a tuple of arrays, all with the block axis first.
    """
    count = len(arrays[0])
    workers = worker_count()
    if workers == 1 or count < max(min_blocks(), 2 * workers):
        return fn(*arrays)

    bounds = np.linspace(0, count, workers + 1).astype(int)
    chunks = [tuple(a[lo:hi] for a in arrays) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda args: fn(*args), chunks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
    return np.concatenate(parts, axis=0)


def map_ordered(fn, items):
    """``[fn(item) for item in items]`` spread over the pool, order preserved."""
    items = list(items)
    workers = worker_count()
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
