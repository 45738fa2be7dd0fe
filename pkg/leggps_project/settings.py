"""
Django settings for the leggps_project project.

The project has no web surface: Django provides the command framework
(manage.py <command>), the settings layer and logging configuration for
the leggps app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.1/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'leggps-local-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'leggps',
]

# No models live in this project; the dummy backend keeps Django happy.
DATABASES = {}

USE_I18N = False
USE_TZ = False


# leggps

# Worker pool size for stage-level block work and finite-difference gradients.
# The --threads flag of every command overrides it.
LEG_THREADS = int(os.environ.get('LEG_THREADS', '1'))

LEGGPS = {
    'DEFAULT_JITTER': 0.0,
    # stages with fewer blocks than this always run in the calling thread
    'PARALLEL_MIN_BLOCKS': 4096,
    # lag grid and tolerance used by `convert` to verify its own output
    'VERIFY_GRID': (0.0, 5.0, 50),
    'VERIFY_TOL': 1e-8,
}


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'leggps': {
            'handlers': ['stderr'],
            'level': os.environ.get('LEGGPS_LOG_LEVEL', 'WARNING'),
            'propagate': False,
        },
    },
}
