"""
Django settings for the holoproject project.

Physical defaults match the bench prototype (532 nm laser, 5.86 um sensor
pitch, 500 us mask pattern period). Deployment-specific values can be overridden through the
environment or a ``.env`` file at the project root.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/5.1/ref/settings/
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-holovideo-batch-runs-only')

DEBUG = os.environ.get('DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'holovideo',
]

# Experiments read and write files only
DATABASES = {}

TIME_ZONE = 'UTC'

USE_TZ = True


# Optics

WAVELENGTH = 532e-9
PIXEL_PITCH = 5.86e-6
PAD_FACTOR = 2
BAND_LIMITED = True

# Scene size used by the two-plane simulation study (9.85 mm over 256 pixels)
SIMULATION_PITCH = 9.85e-3 / 256
SIMULATION_FIRST_PLANE = 70e-3


# Coded exposure

FRAME_INTERVAL = 500e-6
SUPERPIXEL = 4


# Solver

LAMBDA_SPATIAL = 0.01
TWIST_EIG_MIN = 1e-3
TWIST_EIG_MAX = 1.0
TV_INNER_ITERS = 10
NORM_ITERATIONS = 50
NORM_SEED = 0


# Analysis

BLOCK_WINDOW = 21
REJECT_THRESHOLD = 0.5
PROFILE_CORRELATION = 0.9
MIN_PEAK_FRACTION = 0.1
MAX_JUMP = 3e-3
PSNR_CAP_DB = 300.0


# Runtime

OUTPUT_ROOT = Path(os.environ.get('HOLOVIDEO_OUTPUT_ROOT', BASE_DIR / 'runs'))

FFT_WORKERS = int(os.environ.get('HOLOVIDEO_FFT_WORKERS', '1'))

LOG_LEVEL = os.environ.get('HOLOVIDEO_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': LOG_LEVEL,
    },
    'loggers': {
        'holovideo': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'matplotlib': {
            'level': 'WARNING',
        },
        'PIL': {
            'level': 'WARNING',
        },
    },
}
