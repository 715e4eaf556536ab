import csv
import json

from fedmood.experiment import compare_protocols

from ._base import FedmoodCommand, format_number

COLUMNS = (
    "name",
    "protocol",
    "rounds_to_target",
    "scalars_up_to_target",
    "ratio",
    "final_accuracy",
    "epsilon",
)


class Command(FedmoodCommand):
    help = (
        "Compare how many scalars each experiment uploads before reaching its "
        "target accuracy. The first config is the baseline of the ratio column."
    )

    def add_arguments(self, parser):
        parser.add_argument("configs", nargs="+", help="JSON experiment configs.")
        parser.add_argument("--output", help="Also write the table as CSV here.")

    def handle(self, *args, **options):
        configs = []
        for path in options["configs"]:
            with open(path) as config:
                configs.append(json.load(config))
        rows = compare_protocols(configs)

        cells = [
            [
                "not reached"
                if column in ("rounds_to_target", "scalars_up_to_target")
                and not row["reached"]
                else format_number(row[column])
                for column in COLUMNS
            ]
            for row in rows
        ]
        widths = [
            max(len(column), *(len(line[i]) for line in cells))
            for i, column in enumerate(COLUMNS)
        ]
        self.stdout.write(
            "  ".join(column.ljust(width) for column, width in zip(COLUMNS, widths))
        )
        for line in cells:
            self.stdout.write(
                "  ".join(cell.ljust(width) for cell, width in zip(line, widths))
            )

        if options["output"]:
            with open(options["output"], "w", newline="") as output:
                writer = csv.writer(output, lineterminator="\n")
                writer.writerow(COLUMNS)
                writer.writerows(cells)
