import logging
import time

import numpy as np

from leggps import files
from leggps.inference import peg_log_density
from leggps.learn import init_params
from leggps.management.base import LegCommand
from leggps.serializers import BenchOptionsSerializer

logger = logging.getLogger(__name__)


def time_density(times, N, R, z, repeats):
    """Median wall time of one PEG log-density evaluation."""
    walls = []
    for _ in range(repeats):
        start = time.perf_counter()
        peg_log_density(times, N, R, z)
        walls.append(time.perf_counter() - start)
    return float(np.median(walls))


def loglog_slope(sizes, seconds):
    return float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])


class Command(LegCommand):
    help = 'Time the PEG likelihood of the zero path over growing series lengths.'
    serializer_class = BenchOptionsSerializer
    option_names = ('threads', 'rank', 'sizes', 'repeats', 'seed')

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--rank', type=int, default=3)
        parser.add_argument('--sizes', default='2^12..2^20', help='"2^a..2^b" or "m1,m2,..."')
        parser.add_argument('--repeats', type=int, default=5)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('-o', '--output', help='output CSV (default: stdout)')

    def run(self, validated, options):
        ell = validated['rank']
        p = init_params(ell, 1, validated['seed'])
        rng = np.random.default_rng(validated['seed'])
        rows = []
        for m in validated['sizes']:
            times = np.cumsum(rng.uniform(0.5, 1.5, size=m))
            seconds = time_density(times, p.N, p.R, np.zeros(m * ell), validated['repeats'])
            logger.info('m=%d: %.4gs', m, seconds)
            rows.append((m, seconds))

        self.emit(files.write_table(options.get('output'), rows, ['m', 'median_seconds']))
        if len(rows) > 1:
            sizes, seconds = zip(*rows)
            self.stderr.write(f'log-log slope: {loglog_slope(sizes, seconds):.3f}')
