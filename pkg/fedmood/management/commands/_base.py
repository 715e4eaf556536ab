import json
import logging
import math
import os

from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from fedmood.base import HEADS, PROTOCOLS, ProtocolError
from fedmood.experiment import Experiment, dump_config
from fedmood.reports import emit_report

VERBOSITY_LEVELS = {
    0: logging.ERROR,
    1: logging.WARNING,
    2: logging.INFO,
    3: logging.DEBUG,
}

#: Command line flags of dataset options (destination, type).
DATASET_FLAGS = (
    ("n", int),
    ("classes", int),
    ("dim", int),
    ("separation", float),
    ("users", int),
    ("sessions_per_user", int),
    ("strength", float),
)

CONFIG_FLAGS = (
    ("name", str),
    ("workload", str),
    ("hidden", str),
    ("head", str),
    ("hidden_dim", int),
    ("head_size", int),
    ("test_fraction", float),
    ("clients", int),
    ("partition", str),
    ("shards_per_client", int),
    ("rounds", int),
    ("seed", int),
    ("lr", float),
    ("batch_size", int),
    ("local_steps", int),
    ("client_fraction", float),
    ("upload_fraction", float),
    ("download_fraction", float),
    ("strategy", str),
    ("sampling_probability", float),
    ("clip_bound", str),
    ("noise_multiplier", float),
    ("delta", float),
    ("target_accuracy", float),
    ("eval_every", int),
)


def flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def format_number(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.4g}"
    return str(value)


def add_dataset_arguments(parser):
    for name, kind in DATASET_FLAGS:
        parser.add_argument(flag(name), dest=name, type=kind)


def dataset_options(options) -> dict:
    return {
        name: options[name]
        for name, _ in DATASET_FLAGS
        if options.get(name) is not None
    }


class FedmoodCommand(BaseCommand):
    """
    Sets the ``fedmood`` log level from ``--verbosity`` and reports invalid
    input as a :class:`CommandError`.
    """

    def execute(self, *args, **options):
        logging.getLogger("fedmood").setLevel(
            VERBOSITY_LEVELS.get(options.get("verbosity", 1), logging.DEBUG)
        )
        try:
            return super().execute(*args, **options)
        except ValidationError as error:
            raise CommandError(f"Invalid configuration: {error.detail}")
        except (ValueError, ProtocolError, OSError) as error:
            raise CommandError(str(error))


class ExperimentCommand(FedmoodCommand):
    """
    Runs one experiment given by ``--config`` and flags overriding its fields,
    then writes the echoed config, the metric reports, the round traces and
    the saved state (final parameters, client parameters and, for private
    protocols, the privacy ledger) to ``--output``.

    ``--resume`` continues from the saved state in an earlier output
    directory, reading its config unless ``--config`` is given.
    """

    protocol_flag = True

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON experiment config file.")
        parser.add_argument(
            "--output", required=True, help="Directory receiving the results."
        )
        if self.protocol_flag:
            parser.add_argument("--protocol", choices=PROTOCOLS)
        for name, kind in CONFIG_FLAGS:
            choices = HEADS if name == "head" else None
            parser.add_argument(flag(name), dest=name, type=kind, choices=choices)
        parser.add_argument("--data", help="Directory of a saved dataset.")
        parser.add_argument(
            "--resume", help="Output directory of an earlier run to continue."
        )
        add_dataset_arguments(parser)
        parser.add_argument(
            "--stop-at-target", action="store_true", dest="stop_at_target"
        )

    def fixed_options(self) -> dict:
        return {}

    def build_config(self, options) -> dict:
        config = {}
        config_path = options.get("config")
        if not config_path and options.get("resume"):
            config_path = os.path.join(options["resume"], "config.json")
        if config_path:
            with open(config_path) as config_file:
                config = json.load(config_file)
        for name, _ in CONFIG_FLAGS:
            if options.get(name) is not None:
                config[name] = options[name]
        if options.get("protocol"):
            config["protocol"] = options["protocol"]
        if options.get("stop_at_target"):
            config["stop_at_target"] = True
        dataset = dict(config.get("dataset") or {})
        dataset.update(dataset_options(options))
        if options.get("data"):
            dataset["path"] = options["data"]
        if dataset:
            config["dataset"] = dataset
        config.update(self.fixed_options())
        return config

    def handle(self, *args, **options):
        experiment = Experiment(self.build_config(options))
        output = options["output"]
        os.makedirs(output, exist_ok=True)
        dump_config(experiment.config, os.path.join(output, "config.json"))
        records = experiment.run(resume_from=options.get("resume"))
        emit_report(records, os.path.join(output, "metrics.csv"), "csv")
        emit_report(records, os.path.join(output, "metrics.jsonl"), "jsonl")
        if experiment.traces:
            emit_report(
                experiment.traces, os.path.join(output, "traces.jsonl"), "jsonl"
            )
        experiment.save_state(output)
        final = records[-1]
        self.stdout.write(
            f"{experiment.protocol}: round {final['round']}, "
            f"accuracy {format_number(final['accuracy'])}, "
            f"f1 {format_number(final['f1'])}, "
            f"uploaded {final['scalars_up']}, "
            f"epsilon {format_number(final['epsilon'])}"
        )
