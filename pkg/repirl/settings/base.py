"""
Base settings for repirl.
Common configuration shared across all environments.
"""

from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

SECRET_KEY = config("SECRET_KEY", default="repirl-local-key-not-used-for-http")

DEBUG = False

ALLOWED_HOSTS = []

# Application definition
THIRD_PARTY_APPS = [
    "rest_framework",
]

LOCAL_APPS = [
    "apps.core",
    "apps.mdp",
    "apps.policies",
    "apps.oracle",
    "apps.trainer",
    "apps.baselines",
    "apps.evaluation",
    "apps.experiments",
]

INSTALLED_APPS = THIRD_PARTY_APPS + LOCAL_APPS

# Experiments keep their artifacts in run directories, not in a database
DATABASES = {}

# Internationalization
LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Django REST Framework is used only for its serializers (config sections,
# run summaries, evaluation reports)
REST_FRAMEWORK = {
    "UNAUTHENTICATED_USER": None,
}

# Framework settings
REPIRL = {
    "OUTPUT_ROOT": Path(config("REPIRL_OUTPUT_ROOT", default=str(BASE_DIR / "runs"))),
    "ENUMERATION_CAP": config("REPIRL_ENUMERATION_CAP", default=2_000_000, cast=int),
    "WORKERS": config("REPIRL_WORKERS", default=1, cast=int),
}

# Logging Configuration
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {module} {process:d} {message}",
            "style": "{",
        },
        "simple": {
            "format": "{levelname} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "WARNING",
    },
    "loggers": {
        "apps": {
            "handlers": ["console"],
            "level": config("REPIRL_LOG_LEVEL", default="INFO"),
            "propagate": False,
        },
        "repirl": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": False,
        },
    },
}
