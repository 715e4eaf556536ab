import json

from django.core.management.base import CommandError

from fedmood import accountant
from fedmood.conf import settings

from ._base import FedmoodCommand


def _number(value):
    return "inf" if value == accountant.UNBOUNDED else value


class Command(FedmoodCommand):
    help = (
        "Report the privacy spent by private rounds, given either their "
        "parameters or an exported ledger, or the number of rounds a budget "
        "allows."
    )

    def add_arguments(self, parser):
        parser.add_argument("--ledger", help="Ledger exported by a private run.")
        parser.add_argument("--sampling-probability", type=float, dest="p")
        parser.add_argument("--noise-multiplier", type=float, dest="z")
        parser.add_argument("--rounds", type=int, default=1)
        parser.add_argument("--delta", type=float)
        parser.add_argument(
            "--budget",
            type=float,
            help="Report how many rounds fit in this epsilon instead.",
        )

    def handle(self, *args, **options):
        delta = options["delta"]
        if delta is None:
            delta = settings.FEDMOOD_DEFAULT_DELTA
        elif not 0 < delta < 1:
            raise CommandError(f"--delta must be in (0, 1), got {delta}.")
        if options["ledger"]:
            with open(options["ledger"]) as ledger_file:
                ledger = accountant.PrivacyLedger.from_json(ledger_file.read())
            result = {
                "rounds": len(ledger),
                "delta": delta,
                "epsilon": _number(ledger.epsilon(delta)),
            }
        elif options["p"] is None or options["z"] is None:
            raise CommandError(
                "Give --ledger, or both --sampling-probability and --noise-multiplier."
            )
        elif options["budget"] is not None:
            result = {
                "sampling_probability": options["p"],
                "noise_multiplier": options["z"],
                "delta": delta,
                "budget": options["budget"],
                "rounds": accountant.rounds_until_budget(
                    options["p"], options["z"], delta, options["budget"]
                ),
            }
        else:
            if options["rounds"] < 0:
                raise CommandError("--rounds can't be negative.")
            state = accountant.compose_round(
                accountant.AccountantState.empty(),
                options["p"],
                options["z"],
                count=options["rounds"],
            )
            result = {
                "sampling_probability": options["p"],
                "noise_multiplier": options["z"],
                "rounds": options["rounds"],
                "delta": delta,
                "epsilon": _number(accountant.epsilon_at_delta(state, delta)),
            }
        self.stdout.write(json.dumps(result, sort_keys=True))
