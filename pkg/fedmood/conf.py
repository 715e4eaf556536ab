import django.conf
from django.core.exceptions import ImproperlyConfigured


class AppSettings:
    """
    A holder for app-specific default settings that allows overriding via
    the project's settings.

    The library is also usable without a configured Django project, in which
    case the defaults below are used.
    """

    def __getattribute__(self, attr: str):
        if attr == attr.upper():
            try:
                return getattr(django.conf.settings, attr)
            except (AttributeError, ImproperlyConfigured):
                pass
        return super().__getattribute__(attr)


class Settings(AppSettings):
    FEDMOOD_SESSION_GAP = 5.0
    """
    Seconds of keyboard inactivity that start a new typing session.

    The boundary is inclusive: a gap of exactly this many seconds splits.
    """

    FEDMOOD_ACCELEROMETER_CADENCE = 0.060
    """
    Seconds between two accelerometer samples of a generated session.
    """

    FEDMOOD_MAX_SESSION_SECONDS = 60.0
    """
    Upper bound (exclusive) on the duration of a generated session.
    """

    FEDMOOD_ACCOUNTANT_ORDERS = 64
    """
    The accountant tracks integer log-moment orders ``1..FEDMOOD_ACCOUNTANT_ORDERS``.
    """

    FEDMOOD_DEFAULT_DELTA = 1e-5
    """
    The delta used to report epsilon in round traces and metric records when an
    experiment doesn't set one.
    """

    FEDMOOD_EVAL_EVERY = 5
    """
    Evaluate the global model on the held-out split every this many rounds.
    """

    FEDMOOD_TARGET_WINDOW = 3
    """
    Number of evaluations averaged when deciding if the target accuracy was
    reached.
    """

    FEDMOOD_CLIENT_WORKERS = 1
    """
    Threads used to run the clients of a round. Results are always consumed in
    ascending client id order, so this never changes the outcome.
    """

    FEDMOOD_MAX_BUDGET_ROUNDS = 10**7
    """
    Upper bound of the search done by ``rounds_until_budget``.
    """


settings = Settings()
