"""Shared plumbing for the leggps management commands.

Options are validated by a DRF serializer, library errors become
``CommandError`` with their exit code (2 for bad input, 3 for numerical
failures) and ``--threads`` caps the worker pool for one command run.
"""
import logging

import numpy as np
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from leggps import files, parallel
from leggps.exceptions import NUMERIC_ERROR, USAGE_ERROR, LegError
from leggps.inference import dedup, posterior_predictive
from leggps.serializers import PredictOptionsSerializer

logger = logging.getLogger('leggps')


def format_errors(errors):
    if isinstance(errors, dict):
        return '; '.join(f'{key}: {format_errors(value)}' for key, value in errors.items())
    if isinstance(errors, (list, tuple)):
        return ' '.join(format_errors(e) for e in errors)
    return str(errors)


class LegCommand(BaseCommand):
    serializer_class = None
    # option names handed to the serializer
    option_names = ()

    def add_arguments(self, parser):
        parser.add_argument('--threads', type=int, default=None,
                            help='worker pool size (default: LEG_THREADS)')
        parser.add_argument('--verbose', action='store_true', help='debug logging on stderr')

    def add_jitter_argument(self, parser):
        parser.add_argument('--jitter', type=float, default=None,
                            help='added to Lambda Lambda^T when it is singular')

    def get_serializer_class(self):
        return self.serializer_class

    def validate_options(self, options):
        serializer_class = self.get_serializer_class()
        if serializer_class is None:
            return {}
        data = {name: options.get(name) for name in self.option_names if options.get(name) is not None}
        serializer = serializer_class(data=data)
        if not serializer.is_valid():
            raise CommandError(format_errors(serializer.errors), returncode=USAGE_ERROR)
        return serializer.validated_data

    def jitter(self, validated):
        value = validated.get('jitter')
        return settings.LEGGPS['DEFAULT_JITTER'] if value is None else value

    def handle(self, *args, **options):
        previous = logger.level
        if options.get('verbose'):
            logger.setLevel(logging.DEBUG)
        try:
            validated = self.validate_options(options)
            parallel.configure(validated.get('threads') or options.get('threads'))
            return self.run(validated, options)
        except LegError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except MemoryError as exc:
            raise CommandError('out of memory', returncode=NUMERIC_ERROR) from exc
        finally:
            logger.setLevel(previous)
            parallel.configure(None)

    def emit(self, text):
        """Echo CSV text returned by a writer called without an output path."""
        if text is not None:
            self.stdout.write(text, ending='')

    def run(self, validated, options):
        raise NotImplementedError


class PredictCommand(LegCommand):
    """Posterior bands of x(t) at target times: ``t, mean_1..n, sd_1..n``."""

    serializer_class = PredictOptionsSerializer
    option_names = ('threads', 'jitter', 'targets', 'band')
    default_band = 'predictive'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('input', help='series CSV with header t,x1,...,xn')
        parser.add_argument('params', help='parameter JSON file')
        parser.add_argument('--targets', help='"t0:t1:step" or "t1,t2,..."')
        parser.add_argument('--targets-file', help='CSV with a t column')
        parser.add_argument('--band', choices=['predictive', 'latent'], default=self.default_band,
                            help='sd from the predictive variance or the latent uncertainty only')
        parser.add_argument('-o', '--output', help='output CSV (default: stdout)')
        self.add_jitter_argument(parser)

    def default_targets(self, ts):
        return ts.times

    def run(self, validated, options):
        times, values = files.read_series(options['input'])
        ts = dedup(times, values)
        p = files.read_params(options['params'])

        if options.get('targets_file'):
            targets = files.read_times(options['targets_file'])
        elif validated.get('targets') is not None:
            targets = validated['targets']
        else:
            targets = self.default_targets(ts)

        preds = posterior_predictive(ts, p, targets, self.jitter(validated))
        means = np.array([mean for mean, _, _ in preds])
        key = 2 if validated['band'] == 'predictive' else 1
        sds = np.sqrt(np.clip([np.diag(pred[key]) for pred in preds], 0.0, None))
        self.emit(files.write_bands(options.get('output'), targets, means, sds))
        logger.info('wrote %d prediction rows', len(targets))
