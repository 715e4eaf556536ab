from numbers import Integral, Real

from django.core import checks

from fedmood.conf import settings

POSITIVE_INTEGER_SETTINGS = (
    "FEDMOOD_ACCOUNTANT_ORDERS",
    "FEDMOOD_EVAL_EVERY",
    "FEDMOOD_TARGET_WINDOW",
    "FEDMOOD_CLIENT_WORKERS",
    "FEDMOOD_MAX_BUDGET_ROUNDS",
)


def _positive_number(value) -> bool:
    return isinstance(value, Real) and not isinstance(value, bool) and value > 0


@checks.register()
def check_settings(app_configs=None, **kwargs):
    errors = []
    if not _positive_number(settings.FEDMOOD_SESSION_GAP):
        errors.append(
            checks.Error(
                "FEDMOOD_SESSION_GAP must be a positive number of seconds.",
                id="fedmood.E001",
            )
        )
    cadence = settings.FEDMOOD_ACCELEROMETER_CADENCE
    longest = settings.FEDMOOD_MAX_SESSION_SECONDS
    if not (
        _positive_number(cadence) and _positive_number(longest) and cadence < longest
    ):
        errors.append(
            checks.Error(
                "FEDMOOD_ACCELEROMETER_CADENCE and FEDMOOD_MAX_SESSION_SECONDS must "
                "be positive, with the cadence shorter than a session.",
                hint="The defaults are 0.060 and 60.0 seconds.",
                id="fedmood.E002",
            )
        )
    delta = settings.FEDMOOD_DEFAULT_DELTA
    if not (_positive_number(delta) and delta < 1):
        errors.append(
            checks.Error(
                "FEDMOOD_DEFAULT_DELTA must be strictly between 0 and 1.",
                id="fedmood.E003",
            )
        )
    for name in POSITIVE_INTEGER_SETTINGS:
        value = getattr(settings, name)
        if not isinstance(value, Integral) or isinstance(value, bool) or value < 1:
            errors.append(
                checks.Error(
                    f"{name} must be a positive integer, not {value!r}.",
                    id="fedmood.E004",
                )
            )
    return errors
