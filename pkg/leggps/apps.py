from django.apps import AppConfig


class LeggpsConfig(AppConfig):
    name = 'leggps'
    verbose_name = 'LEG Gaussian processes'
