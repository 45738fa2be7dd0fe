from rest_framework.renderers import JSONRenderer

from leggps import files
from leggps.inference import dedup, log_likelihood
from leggps.management.base import LegCommand
from leggps.serializers import CommonOptionsSerializer


class Command(LegCommand):
    help = 'Print the log-likelihood of a series under a parameter file as JSON.'
    serializer_class = CommonOptionsSerializer
    option_names = ('threads', 'jitter')

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('input', help='series CSV with header t,x1,...,xn')
        parser.add_argument('params', help='parameter JSON file')
        self.add_jitter_argument(parser)

    def run(self, validated, options):
        times, values = files.read_series(options['input'])
        ts = dedup(times, values)
        p = files.read_params(options['params'])
        ll = log_likelihood(ts, p, self.jitter(validated))
        report = {
            'log_likelihood': ll,
            'nats': -ll,
            'nats_per_observation': -ll / ts.n_obs,
            'n_obs': ts.n_obs,
        }
        self.stdout.write(JSONRenderer().render(report).decode())
