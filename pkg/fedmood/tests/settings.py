SECRET_KEY = "test"

INSTALLED_APPS = ("fedmood",)

DATABASES = {"default": {"ENGINE": "django.db.backends.sqlite3"}}
DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "handlers": {"console": {"class": "logging.StreamHandler"}},
    "loggers": {"fedmood": {"handlers": ["console"], "level": "WARNING"}},
}

USE_TZ = True
