from django.core.management.base import CommandError

from leggps.exceptions import USAGE_ERROR
from leggps.management.base import PredictCommand


class Command(PredictCommand):
    help = 'Predictive means and bands at target times (interpolation or forecast).'
    default_band = 'predictive'

    def default_targets(self, ts):
        raise CommandError('forecast needs --targets or --targets-file', returncode=USAGE_ERROR)
