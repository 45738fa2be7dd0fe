import dataclasses
from functools import partial

import numpy as np
from django.conf import settings
from django.core.management.base import CommandError

from leggps import files
from leggps.exceptions import NUMERIC_ERROR
from leggps.kernel import (
    LEGParams, c_leg_many, celerite_eval, celerite_kernel_to_leg, simple_real_sm, sm_eval,
    sm_mixture_to_leg,
)
from leggps.management.base import LegCommand
from leggps.serializers import ConvertOptionsSerializer


def celerite_source(taus, terms):
    return sum(celerite_eval(taus, term) for term in terms)[:, None, None]


def sm_source(taus, components):
    pairs = [comp for b, mu, gamma in components for comp in simple_real_sm(b, mu, gamma)]
    return np.array([sm_eval(tau, pairs) for tau in taus])


class Command(LegCommand):
    help = 'Write the LEG parameters of a Celerite or spectral-mixture kernel.'
    serializer_class = ConvertOptionsSerializer
    option_names = ('threads', 'celerite', 'sm', 'noise')

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--celerite', action='append', metavar='a,b,c,d',
                            help='celerite term; repeat to add terms')
        parser.add_argument('--sm', action='append', metavar='re,im,mu,gamma',
                            help='simple real spectral-mixture term; repeat to add terms')
        parser.add_argument('--noise', type=float, default=0.0, help='Lambda = noise * I')
        parser.add_argument('-o', '--output', required=True, help='parameter JSON to write')

    def verify(self, p: LEGParams, source):
        t0, t1, count = settings.LEGGPS['VERIFY_GRID']
        taus = np.linspace(t0, t1, int(count))
        tol = settings.LEGGPS['VERIFY_TOL']
        expected = np.asarray(source(taus))
        scale = max(1.0, float(np.abs(expected).max()))
        if np.abs(np.imag(expected)).max() > tol * scale:
            raise CommandError('source kernel is not real', returncode=NUMERIC_ERROR)
        err = float(np.abs(c_leg_many(taus, p) - expected.real).max()) / scale
        if not err <= tol:
            raise CommandError(
                f'converted kernel does not reproduce the source (relative error {err:.3g})',
                returncode=NUMERIC_ERROR)
        return err

    def run(self, validated, options):
        if validated['celerite']:
            p = celerite_kernel_to_leg(validated['terms'])
            source = partial(celerite_source, terms=validated['terms'])
            meta = {'source': 'celerite', 'terms': [list(t) for t in validated['celerite']]}
        else:
            p = sm_mixture_to_leg(validated['components'])
            source = partial(sm_source, components=validated['components'])
            meta = {'source': 'sm', 'terms': [list(t) for t in validated['sm']]}

        err = self.verify(p, source)
        meta['verify_error'] = err
        n = p.obs_dim
        p = dataclasses.replace(p, Lambda=validated['noise'] * np.eye(n))
        files.write_params(options['output'], p, meta=meta)
