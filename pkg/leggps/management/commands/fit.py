import numpy as np
from django.core.management.base import CommandError

from leggps import files
from leggps.exceptions import USAGE_ERROR
from leggps.inference import dedup
from leggps.learn import FitConfig, fit_restarts
from leggps.management.base import LegCommand
from leggps.serializers import FitOptionsSerializer


def _finite_or_none(value):
    return float(value) if np.isfinite(value) else None


class Command(LegCommand):
    help = 'Fit a LEG model to one or more independent series by maximum likelihood.'
    serializer_class = FitOptionsSerializer
    option_names = ('threads', 'jitter', 'rank', 'max_iter', 'grad_tol', 'seed', 'restarts', 'diag_lambda')

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('inputs', nargs='*', help='series CSV files (t,x1,...,xn)')
        parser.add_argument('--input', action='append', default=[], dest='extra_inputs',
                            help='another series CSV; may be repeated')
        parser.add_argument('--rank', type=int, required=True)
        parser.add_argument('--max-iter', type=int, default=200)
        parser.add_argument('--grad-tol', type=float, default=1e-6)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--restarts', type=int, default=1)
        parser.add_argument('--diag-lambda', action='store_true')
        parser.add_argument('--init', help='parameter JSON to start from')
        parser.add_argument('-o', '--output', required=True, help='parameter JSON to write')
        self.add_jitter_argument(parser)

    def run(self, validated, options):
        paths = list(options['inputs']) + list(options['extra_inputs'])
        if not paths:
            raise CommandError('fit needs at least one input series', returncode=USAGE_ERROR)
        series = [dedup(*files.read_series(path)) for path in paths]
        init = files.read_params(options['init']) if options.get('init') else None

        cfg = FitConfig(
            rank=validated['rank'],
            max_iter=validated['max_iter'],
            grad_tol=validated['grad_tol'],
            seed=validated['seed'],
            diag_lambda=validated['diag_lambda'],
            jitter=self.jitter(validated),
        )
        result = fit_restarts(series, cfg, validated['restarts'], init)

        output = options['output']
        files.write_params(output, result.params, meta={
            'rank': cfg.rank,
            'final_nats': result.final_nats,
            'nats_per_observation': result.nats_per_observation,
            'status': result.status.value,
        })
        files.write_json(f'{output}.trace.json', {
            'nats_trajectory': [_finite_or_none(v) for v in result.nats_trajectory],
            'final_nats': result.final_nats,
            'grad_norm': _finite_or_none(result.grad_norm),
            'n_obj_evals': result.n_obj_evals,
            'n_grad_evals': result.n_grad_evals,
            'status': result.status.value,
            'message': result.message,
        })
        self.stderr.write(f'{result.status.value}: {result.final_nats:.6f} nats '
                          f'({result.nats_per_observation:.6f} per observation)')
