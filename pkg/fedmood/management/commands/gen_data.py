from fedmood import data
from fedmood.serializers import DatasetSerializer

from ._base import FedmoodCommand, add_dataset_arguments


class Command(FedmoodCommand):
    help = "Generate a synthetic dataset and save it in the columnar text format."

    def add_arguments(self, parser):
        parser.add_argument(
            "--kind", choices=("classification", "sessions"), default="classification"
        )
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--output", required=True)
        add_dataset_arguments(parser)

    def handle(self, *args, **options):
        serializer = DatasetSerializer(
            data={
                key: value
                for key, value in options.items()
                if value is not None and key in DatasetSerializer().fields
            }
        )
        serializer.is_valid(raise_exception=True)
        spec = serializer.validated_data
        if spec["kind"] == "classification":
            dataset = data.gen_classification(
                options["seed"],
                spec["n"],
                spec["classes"],
                spec["dim"],
                spec["separation"],
            )
        else:
            dataset = data.gen_multiview_sessions(
                options["seed"],
                spec["users"],
                spec["sessions_per_user"],
                data.SignalSpec(classes=spec["classes"], strength=spec["strength"]),
            )
        data.save_dataset(dataset, options["output"])
        self.stdout.write(
            f"Saved {len(dataset)} {dataset.kind} samples to {options['output']}"
        )
