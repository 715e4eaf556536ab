"""
Experiment orchestration.

An experiment is described by a single JSON config (see
:class:`~fedmood.serializers.ExperimentConfigSerializer`). Running it builds
the dataset and its train/test split, the model, the clients and the server,
then runs the protocol rounds and evaluates the global model on the test split
every ``eval_every`` rounds.
"""
import json
import logging
import math
import os
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from typing_extensions import TypedDict

from fedmood import data, federation, networks
from fedmood.accountant import PrivacyLedger
from fedmood.params import load_checkpoint, save_checkpoint
from fedmood.base import ShapeError
from fedmood.conf import settings
from fedmood.numeric import Rng
from fedmood.serializers import ExperimentConfigSerializer

logger = logging.getLogger(__name__)

ExperimentConfig = Dict[str, Any]

PROGRESS_FORMAT = "fedmood-progress"
PROGRESS_VERSION = 1


class MetricRecord(TypedDict):
    round: int
    protocol: str
    #: Clients that took part in the last round.
    participants: int
    #: Mean local training loss of the last round.
    train_loss: Optional[float]
    #: Test loss.
    loss: float
    accuracy: float
    f1: float
    #: Per-user accuracy of the session ensemble (session workloads only).
    user_accuracy: Optional[float]
    #: Scalars transferred since round 0.
    scalars_up: int
    scalars_down: int
    #: Privacy spent so far (private protocols only).
    epsilon: Optional[float]


class TraceRecord(TypedDict):
    """
    One line of ``traces.jsonl``: what a single protocol round did.
    """

    round: int
    protocol: str
    participants: List[int]
    #: Mean local training loss, ``None`` when no client took part.
    loss: Optional[float]
    #: Test accuracy when the round was evaluated.
    accuracy: Optional[float]
    #: Scalars transferred during this round.
    scalars_up: int
    scalars_down: int
    epsilon_so_far: Optional[float]


class ComparisonRow(TypedDict):
    name: str
    protocol: str
    reached: bool
    rounds_to_target: Optional[int]
    scalars_up_to_target: Optional[int]
    #: Baseline uploads until target divided by this config's.
    ratio: Optional[float]
    final_accuracy: float
    epsilon: Optional[float]


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    """
    Validate ``config`` and return it with every default filled in.

    :raises rest_framework.exceptions.ValidationError: on invalid input.
    """
    serializer = ExperimentConfigSerializer(data=config)
    serializer.is_valid(raise_exception=True)
    validated = dict(serializer.validated_data)
    validated["dataset"] = dict(validated["dataset"])
    return validated


def _jsonable(value):
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def dump_config(config: ExperimentConfig, path: Union[str, os.PathLike]) -> None:
    with open(path, "w") as output:
        json.dump(_jsonable(config), output, indent=2, sort_keys=True)
        output.write("\n")


def load_config(path: Union[str, os.PathLike]) -> ExperimentConfig:
    with open(path) as config:
        return validate_config(json.load(config))


def f1_macro(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """
    Unweighted mean of the per-class F1 scores over every class that occurs
    in ``predictions`` or ``labels``.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ShapeError("f1_macro", labels.shape, predictions.shape)
    if not labels.size:
        raise ValueError("Can't score an empty set of predictions")
    scores = []
    for label in np.union1d(predictions, labels):
        true_positive = np.sum((predictions == label) & (labels == label))
        false_positive = np.sum((predictions == label) & (labels != label))
        false_negative = np.sum((predictions != label) & (labels == label))
        scores.append(
            2 * true_positive / (2 * true_positive + false_positive + false_negative)
        )
    return float(np.mean(scores))


def first_target_record(
    records: Sequence[MetricRecord], target: float, window: int
) -> Optional[MetricRecord]:
    """
    The first record at which the mean test accuracy of the last ``window``
    evaluations after round 0 reaches ``target``.
    """
    evaluated: List[float] = []
    for record in records:
        if record["round"] == 0:
            continue
        evaluated.append(record["accuracy"])
        if len(evaluated) >= window and np.mean(evaluated[-window:]) >= target:
            return record
    return None


class Experiment:
    """
    One run of one config.

    After :meth:`run`, ``server`` holds the final server state, ``traces`` one
    :class:`TraceRecord` per round and ``ledger`` the privacy ledger of
    private protocols. :meth:`save_state` writes what a later run needs to
    carry on from the last round.
    """

    target_window: Optional[int] = None

    def __init__(self, config: ExperimentConfig):
        self.config = validate_config(config)
        self.server: Optional[federation.ServerState] = None
        self.ledger: Optional[PrivacyLedger] = None
        self.traces: List[TraceRecord] = []

    def get_option(self, option: str):
        """
        Get a configuration option, trying the experiment attribute first and
        falling back to a Django project setting.
        """
        value = getattr(self, option, None)
        if value is not None:
            return value
        return getattr(settings, f"FEDMOOD_{option.upper()}")

    @property
    def protocol(self) -> str:
        return self.config["protocol"]

    def build_dataset(self) -> data.Dataset:
        spec = self.config["dataset"]
        if spec.get("path"):
            dataset = data.load_dataset(spec["path"])
            if dataset.kind != spec["kind"]:
                raise ValueError(
                    f"{spec['path']} holds {dataset.kind} data, not {spec['kind']}"
                )
            return dataset
        if spec["kind"] == "classification":
            return data.gen_classification(
                self.config["seed"],
                spec["n"],
                spec["classes"],
                spec["dim"],
                spec["separation"],
            )
        return data.gen_multiview_sessions(
            self.config["seed"],
            spec["users"],
            spec["sessions_per_user"],
            data.SignalSpec(classes=spec["classes"], strength=spec["strength"]),
        )

    def build_model(self, dataset: data.Dataset) -> networks.Model:
        if self.config["workload"] == "mlp":
            return networks.MlpModel(
                [dataset.dim, *self.config["hidden"], dataset.classes]
            )
        return networks.MultiViewGruModel(
            hidden_dim=self.config["hidden_dim"],
            classes=dataset.classes,
            head=self.config["head"],
            head_size=self.config["head_size"],
        )

    def setup(self):
        config = self.config
        dataset = self.build_dataset()
        train_indices, test_indices = data.train_test_split(
            len(dataset), config["test_fraction"], config["seed"]
        )
        self.train = dataset.subset(train_indices)
        self.test = dataset.subset(test_indices)
        if not len(self.test):
            raise ValueError("The test split is empty")
        model = self.build_model(dataset)
        params = networks.init_params(model, Rng(config["seed"]).child("model"))
        if self.protocol == "centralized":
            split = data.Partition({0: list(range(len(self.train)))}, "iid")
        else:
            split = data.partition(
                self.train,
                config["clients"],
                config["partition"],
                config["seed"],
                config.get("shards_per_client", 2),
            )
        self.clients = federation.build_clients(
            self.train, split, params, config["seed"]
        )
        self.server = federation.ServerState.start(
            model, params, self.clients, config["seed"]
        )
        if self.protocol == "dp-fedavg":
            self.ledger = PrivacyLedger()
        logger.info(
            "Experiment %s: %s on %d training samples, %d clients, %d rounds",
            config.get("name") or self.protocol,
            config["workload"],
            len(self.train),
            len(self.clients),
            config["rounds"],
        )

    def step(self, server: federation.ServerState) -> federation.ServerState:
        config = self.config
        if self.protocol in ("centralized", "naive"):
            return federation.naive_distributed_sgd_round(
                server,
                self.clients,
                config["lr"],
                config["batch_size"],
                protocol=self.protocol,
            )
        if self.protocol == "selective":
            return federation.selective_sgd_round(
                server,
                self.clients,
                federation.SelectiveSgdConfig(
                    upload_fraction=config["upload_fraction"],
                    download_fraction=config["download_fraction"],
                    strategy=config["strategy"],
                    lr=config["lr"],
                    batch_size=config["batch_size"],
                ),
            )
        if self.protocol == "fedavg":
            return federation.fedavg_round(
                server,
                self.clients,
                federation.FedAvgConfig(
                    local_steps=config["local_steps"],
                    lr=config["lr"],
                    batch_size=config["batch_size"],
                    client_fraction=config["client_fraction"],
                ),
            )
        return federation.dp_fedavg_round(
            server,
            self.clients,
            federation.FedAvgConfig(
                local_steps=config["local_steps"],
                lr=config["lr"],
                batch_size=config["batch_size"],
            ),
            federation.DpConfig(
                sampling_probability=config["sampling_probability"],
                clip_bound=config["clip_bound"],
                noise_multiplier=config["noise_multiplier"],
            ),
            self.ledger,
        )

    def communication(self, server: federation.ServerState):
        if self.protocol == "centralized":
            return 0, 0
        return federation.total_communication(server)

    def evaluate(self, server: federation.ServerState) -> MetricRecord:
        model = server.model.with_params(server.params.copy())
        loss, predictions = networks.evaluate(model, self.test)
        labels = np.array([sample.label for sample in self.test], dtype=np.int64)
        up, down = self.communication(server)
        trace = server.last_trace
        record: MetricRecord = {
            "round": server.round,
            "protocol": self.protocol,
            "participants": len(trace.participants) if trace else 0,
            "train_loss": (
                trace.loss if trace and not math.isnan(trace.loss) else None
            ),
            "loss": loss,
            "accuracy": float(np.mean(predictions == labels)),
            "f1": f1_macro(predictions, labels),
            "user_accuracy": self.user_accuracy(model),
            "scalars_up": up,
            "scalars_down": down,
            "epsilon": (
                self.ledger.epsilon(self.config["delta"]) if self.ledger else None
            ),
        }
        logger.info(
            "Round %d: test loss %.6f, accuracy %.4f",
            record["round"],
            record["loss"],
            record["accuracy"],
        )
        return record

    def trace_record(
        self, server: federation.ServerState, record: Optional[MetricRecord]
    ) -> TraceRecord:
        trace = server.last_trace
        if self.protocol == "centralized":
            up = down = 0
        else:
            up, down = federation.communication_cost(trace)
        return {
            "round": server.round,
            "protocol": self.protocol,
            "participants": list(trace.participants),
            "loss": None if math.isnan(trace.loss) else trace.loss,
            "accuracy": record["accuracy"] if record else None,
            "scalars_up": up,
            "scalars_down": down,
            "epsilon_so_far": (
                self.ledger.epsilon(self.config["delta"]) if self.ledger else None
            ),
        }

    def save_state(self, directory: Union[str, os.PathLike]) -> None:
        """
        Write the server parameters, every client's local parameters, the
        privacy ledger and the round counters to ``directory``.
        """
        if self.server is None:
            raise ValueError("Nothing to save before the experiment has run")
        directory = os.fspath(directory)
        os.makedirs(os.path.join(directory, "clients"), exist_ok=True)
        save_checkpoint(os.path.join(directory, "params.bin"), self.server.params)
        for client in self.clients:
            save_checkpoint(
                os.path.join(directory, "clients", f"{client.client_id}.bin"),
                client.params,
            )
        if self.ledger is not None:
            with open(os.path.join(directory, "ledger.json"), "w") as ledger:
                ledger.write(self.ledger.to_json())
        progress = {
            "format": PROGRESS_FORMAT,
            "version": PROGRESS_VERSION,
            "protocol": self.protocol,
            "round": self.server.round,
            "scalars_up": self.server.scalars_up,
            "scalars_down": self.server.scalars_down,
        }
        with open(os.path.join(directory, "progress.json"), "w") as output:
            json.dump(progress, output, indent=2, sort_keys=True)
            output.write("\n")

    def restore(self, directory: Union[str, os.PathLike]) -> None:
        """
        Continue from a directory written by :meth:`save_state`. Must follow
        :meth:`setup` with the same config.
        """
        directory = os.fspath(directory)
        with open(os.path.join(directory, "progress.json")) as progress_file:
            progress = json.load(progress_file)
        if progress.get("format") != PROGRESS_FORMAT:
            raise ValueError(f"{directory} holds no {PROGRESS_FORMAT} state")
        if progress.get("version") != PROGRESS_VERSION:
            raise ValueError(
                f"Unsupported progress version {progress.get('version')!r}"
            )
        if progress["protocol"] != self.protocol:
            raise ValueError(
                f"{directory} holds a {progress['protocol']} run, "
                f"not {self.protocol}"
            )
        params = load_checkpoint(os.path.join(directory, "params.bin"))
        self.server.params.check_layout(params)
        for client in self.clients:
            client_params = load_checkpoint(
                os.path.join(directory, "clients", f"{client.client_id}.bin")
            )
            params.check_layout(client_params)
            client.params = client_params
        if self.ledger is not None:
            with open(os.path.join(directory, "ledger.json")) as ledger:
                self.ledger = PrivacyLedger.from_json(ledger.read())
        self.server = self.server._replace(
            params=params,
            round=progress["round"],
            scalars_up=progress["scalars_up"],
            scalars_down=progress["scalars_down"],
        )
        logger.info("Resuming from round %d of %s", progress["round"], directory)

    def user_accuracy(self, model: networks.Model) -> Optional[float]:
        """
        Accuracy of :func:`~fedmood.networks.ensemble_by_user` against each
        user's majority test label.
        """
        if self.test.kind != "sessions":
            return None
        predicted = networks.ensemble_by_user(model, self.test)
        users, labels = self.test.users, self.test.labels
        hits = [
            predicted[user] == int(np.bincount(labels[users == user]).argmax())
            for user in predicted
        ]
        return float(np.mean(hits))

    def run(
        self, resume_from: Optional[Union[str, os.PathLike]] = None
    ) -> List[MetricRecord]:
        """
        Run the rounds left until ``config["rounds"]``, starting over or from
        the state saved in ``resume_from``.
        """
        self.setup()
        if resume_from is not None:
            self.restore(resume_from)
        config = self.config
        window = self.get_option("target_window")
        server = self.server
        self.traces = []
        records = [self.evaluate(server)]
        while server.round < config["rounds"]:
            server = self.step(server)
            self.server = server
            record = None
            if not server.round % config["eval_every"] or (
                server.round == config["rounds"]
            ):
                record = self.evaluate(server)
                records.append(record)
            self.traces.append(self.trace_record(server, record))
            if (
                record is not None
                and config["stop_at_target"]
                and first_target_record(records, config["target_accuracy"], window)
            ):
                logger.info("Target accuracy reached at round %d", server.round)
                break
        if config["target_accuracy"] is not None and not first_target_record(
            records, config["target_accuracy"], window
        ):
            logger.warning(
                "Target accuracy %.4f not reached in %d rounds",
                config["target_accuracy"],
                server.round,
            )
        return records


def run_experiment(config: ExperimentConfig) -> List[MetricRecord]:
    return Experiment(config).run()


def compare_protocols(configs: Sequence[ExperimentConfig]) -> List[ComparisonRow]:
    """
    Run every config and compare the scalars each uploaded until reaching its
    target accuracy. The first config is the baseline of the ``ratio`` column.
    """
    experiments = [Experiment(config) for config in configs]
    if not experiments:
        raise ValueError("Nothing to compare")
    shared = ("workload", "dataset", "seed")
    baseline = experiments[0].config
    for experiment in experiments[1:]:
        for key in shared:
            if experiment.config[key] != baseline[key]:
                raise ValueError(f"Compared configs must share the same {key}")
    window = experiments[0].get_option("target_window")

    rows: List[ComparisonRow] = []
    for index, experiment in enumerate(experiments):
        records = experiment.run()
        target = experiment.config["target_accuracy"]
        hit = (
            first_target_record(records, target, window)
            if target is not None
            else None
        )
        rows.append(
            {
                "name": experiment.config.get("name") or f"config{index}",
                "protocol": experiment.protocol,
                "reached": hit is not None,
                "rounds_to_target": hit["round"] if hit else None,
                "scalars_up_to_target": hit["scalars_up"] if hit else None,
                "ratio": None,
                "final_accuracy": records[-1]["accuracy"],
                "epsilon": records[-1]["epsilon"],
            }
        )
    baseline_up = rows[0]["scalars_up_to_target"]
    for row in rows:
        up = row["scalars_up_to_target"]
        if baseline_up is not None and up:
            row["ratio"] = baseline_up / up
        elif baseline_up == 0 and up == 0:
            row["ratio"] = 1.0
    return rows
