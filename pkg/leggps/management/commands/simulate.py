import numpy as np

from leggps import files
from leggps.inference import simulate
from leggps.management.base import LegCommand
from leggps.serializers import SimulateOptionsSerializer


class Command(LegCommand):
    help = 'Sample a series from a LEG model at the given times.'
    serializer_class = SimulateOptionsSerializer
    option_names = ('threads', 'times', 'seed')

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('params', help='parameter JSON file')
        parser.add_argument('--times', required=True, help='"t0:t1:step" or "t1,t2,..."')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('-o', '--output', help='output CSV (default: stdout)')

    def run(self, validated, options):
        p = files.read_params(options['params'])
        times = np.sort(validated['times'], kind='stable')
        ts = simulate(times, p, np.random.default_rng(validated['seed']))
        self.emit(files.write_series(options.get('output'), ts.raw_times, ts.values))
