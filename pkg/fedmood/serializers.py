"""
Validation of experiment configuration files.

The validated data is the complete configuration: every default is filled in
and options that don't apply to the chosen workload, dataset or protocol are
dropped, so echoing it reproduces the run.
"""
import math

from rest_framework import serializers

from fedmood import serializer_fields
from fedmood.base import HEADS, PROTOCOLS
from fedmood.conf import settings

WORKLOADS = ("mlp", "multiview-gru")
DATASET_KINDS = ("classification", "sessions")
WORKLOAD_DATASETS = {"mlp": "classification", "multiview-gru": "sessions"}

DATASET_OPTIONS = {
    "classification": ("n", "classes", "dim", "separation"),
    "sessions": ("users", "sessions_per_user", "classes", "strength"),
}

WORKLOAD_OPTIONS = {
    "mlp": ("hidden",),
    "multiview-gru": ("head", "hidden_dim", "head_size"),
}

PROTOCOL_OPTIONS = {
    "centralized": (),
    "naive": (),
    "selective": ("upload_fraction", "download_fraction", "strategy"),
    "fedavg": ("local_steps", "client_fraction"),
    "dp-fedavg": (
        "local_steps",
        "sampling_probability",
        "clip_bound",
        "noise_multiplier",
        "delta",
    ),
}


def _default_delta():
    return settings.FEDMOOD_DEFAULT_DELTA


def _default_eval_every():
    return settings.FEDMOOD_EVAL_EVERY


class ProvidedKeysMixin:
    """
    Remember which keys the input actually had, for nested use too.
    """

    provided: frozenset = frozenset()

    def to_internal_value(self, data):
        if hasattr(data, "keys"):
            self.provided = frozenset(data.keys())
        return super().to_internal_value(data)


def _only_for(options, chosen, provided, attrs):
    """
    Reject options that were given but don't apply to ``chosen`` and drop
    defaults that don't apply.
    """
    errors = {}
    wanted = set(options[chosen])
    for option in {name for names in options.values() for name in names} - wanted:
        if option in provided:
            applies = sorted(key for key, names in options.items() if option in names)
            errors[option] = f"Only applies to {', '.join(applies)}, not {chosen}."
        attrs.pop(option, None)
    if errors:
        raise serializers.ValidationError(errors)
    return attrs


class DatasetSerializer(ProvidedKeysMixin, serializers.Serializer):
    kind = serializers.ChoiceField(DATASET_KINDS, default="classification")
    #: Load a saved dataset instead of generating one.
    path = serializers.CharField(required=False)
    n = serializers.IntegerField(min_value=2, default=2000)
    classes = serializers.IntegerField(min_value=2, default=2)
    dim = serializers.IntegerField(min_value=1, default=10)
    separation = serializers.FloatField(min_value=0, default=3.0)
    users = serializers.IntegerField(min_value=1, default=20)
    sessions_per_user = serializers.IntegerField(min_value=1, default=200)
    strength = serializers.FloatField(min_value=0, default=1.0)

    def validate(self, attrs):
        attrs = _only_for(DATASET_OPTIONS, attrs["kind"], self.provided, attrs)
        if attrs["kind"] == "classification" and attrs["n"] < attrs["classes"]:
            raise serializers.ValidationError(
                {"n": "Need at least one sample per class."}
            )
        return attrs


class ExperimentConfigSerializer(ProvidedKeysMixin, serializers.Serializer):
    name = serializers.CharField(required=False, allow_blank=True)
    workload = serializers.ChoiceField(WORKLOADS, default="mlp")
    hidden = serializer_fields.SizesField(default=[16], allow_empty=True)
    head = serializers.ChoiceField(HEADS, default="fc")
    hidden_dim = serializers.IntegerField(min_value=1, default=8)
    head_size = serializers.IntegerField(min_value=1, default=8)
    dataset = DatasetSerializer(required=False)
    test_fraction = serializers.FloatField(min_value=0.01, max_value=0.9, default=0.2)

    protocol = serializers.ChoiceField(PROTOCOLS, default="fedavg")
    clients = serializers.IntegerField(min_value=1, default=10)
    partition = serializers.ChoiceField(("iid", "non-iid"), default="iid")
    shards_per_client = serializers.IntegerField(min_value=1, default=2)
    rounds = serializers.IntegerField(min_value=0, default=50)
    seed = serializers.IntegerField(min_value=0, max_value=2**63 - 1, default=0)
    lr = serializers.FloatField(min_value=0, default=0.1)
    batch_size = serializers.IntegerField(min_value=1, allow_null=True, default=None)

    local_steps = serializers.IntegerField(min_value=1, default=1)
    client_fraction = serializers.FloatField(min_value=0, max_value=1, default=1.0)
    upload_fraction = serializers.FloatField(min_value=0, max_value=1, default=0.1)
    download_fraction = serializers.FloatField(min_value=0, max_value=1, default=1.0)
    strategy = serializers.ChoiceField(
        ("largest-magnitude", "random"), default="largest-magnitude"
    )
    sampling_probability = serializers.FloatField(
        min_value=0, max_value=1, default=1.0
    )
    clip_bound = serializer_fields.BoundField(default=math.inf)
    noise_multiplier = serializers.FloatField(min_value=0, default=0.0)
    delta = serializers.FloatField(min_value=0, max_value=1, default=_default_delta)

    target_accuracy = serializers.FloatField(
        min_value=0, max_value=1, allow_null=True, default=None
    )
    stop_at_target = serializers.BooleanField(default=False)
    eval_every = serializers.IntegerField(min_value=1, default=_default_eval_every)

    def to_internal_value(self, data):
        dataset = data.get("dataset") if hasattr(data, "get") else None
        if isinstance(dataset, dict) and "kind" not in dataset:
            workload = data.get("workload", "mlp")
            data = dict(data)
            data["dataset"] = {
                "kind": WORKLOAD_DATASETS.get(workload, "classification"),
                **dataset,
            }
        return super().to_internal_value(data)

    def _check_open_interval(self, attrs, names):
        errors = {}
        for name in names:
            if name in attrs and attrs[name] == 0:
                errors[name] = "Must be greater than 0."
        if "delta" in attrs and not 0 < attrs["delta"] < 1:
            errors["delta"] = "Must be strictly between 0 and 1."
        if errors:
            raise serializers.ValidationError(errors)

    def validate(self, attrs):
        provided = self.provided
        if "dataset" not in attrs:
            dataset = DatasetSerializer(
                data={"kind": WORKLOAD_DATASETS[attrs["workload"]]}
            )
            dataset.is_valid(raise_exception=True)
            attrs["dataset"] = dict(dataset.validated_data)
        else:
            attrs["dataset"] = dict(attrs["dataset"])
        expected = WORKLOAD_DATASETS[attrs["workload"]]
        if attrs["dataset"]["kind"] != expected:
            raise serializers.ValidationError(
                {"dataset": f"The {attrs['workload']} workload needs {expected} data."}
            )
        attrs = _only_for(WORKLOAD_OPTIONS, attrs["workload"], provided, attrs)
        attrs = _only_for(PROTOCOL_OPTIONS, attrs["protocol"], provided, attrs)
        self._check_open_interval(
            attrs,
            (
                "client_fraction",
                "upload_fraction",
                "download_fraction",
                "sampling_probability",
            ),
        )
        if attrs["protocol"] == "centralized":
            if "clients" in provided and attrs["clients"] != 1:
                raise serializers.ValidationError(
                    {"clients": "A centralized run has a single client."}
                )
            attrs["clients"] = 1
        if attrs["protocol"] == "dp-fedavg":
            if attrs["noise_multiplier"] > 0 and math.isinf(attrs["clip_bound"]):
                raise serializers.ValidationError(
                    {"clip_bound": "Adding noise needs a finite clip bound."}
                )
        if attrs["partition"] == "iid":
            attrs.pop("shards_per_client", None)
        if attrs["stop_at_target"] and attrs["target_accuracy"] is None:
            raise serializers.ValidationError(
                {"stop_at_target": "Needs a target_accuracy."}
            )
        return attrs
