from leggps.management.base import PredictCommand


class Command(PredictCommand):
    help = 'Posterior means and bands of the series, at its own times unless --targets is given.'
    default_band = 'latent'
