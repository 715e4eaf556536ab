"""
Settings for running fedmood standalone (``python -m fedmood`` or the
``fedmood`` console script) outside of a host Django project.
"""
import os

SECRET_KEY = os.environ.get("FEDMOOD_SECRET_KEY", "fedmood-standalone")

INSTALLED_APPS = ("fedmood",)

DATABASES: dict = {}

USE_TZ = True

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"}
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "plain"},
    },
    "loggers": {
        "fedmood": {
            "handlers": ["console"],
            "level": os.environ.get("FEDMOOD_LOG_LEVEL", "WARNING"),
        },
    },
}
