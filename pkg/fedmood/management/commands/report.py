from fedmood.reports import FORMATS, emit_report, load_records

from ._base import FedmoodCommand


class Command(FedmoodCommand):
    help = "Convert the jsonl metric records of a run to another report format."

    def add_arguments(self, parser):
        parser.add_argument("--input", required=True, help="A metrics.jsonl file.")
        parser.add_argument("--format", choices=FORMATS, default="csv")
        parser.add_argument("--output", required=True)

    def handle(self, *args, **options):
        records = load_records(options["input"])
        emit_report(records, options["output"], options["format"])
        self.stdout.write(
            f"Wrote {len(records)} records to {options['output']} ({options['format']})"
        )
