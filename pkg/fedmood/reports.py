"""
Metric report files.

``csv`` reports have the fixed header ``round,loss,acc,f1,up,down,eps``;
``jsonl`` reports hold one complete :class:`~fedmood.experiment.MetricRecord`
per line. Floats are written with their shortest exact representation, an
unbounded epsilon as ``inf`` and a missing value as an empty CSV cell or
``null``.
"""
import csv
import json
import math
import os
from typing import Any, Dict, List, Sequence, Union

from typing_extensions import Literal

ReportFormat = Literal["csv", "jsonl"]

CSV_COLUMNS = (
    ("round", "round"),
    ("loss", "loss"),
    ("acc", "accuracy"),
    ("f1", "f1"),
    ("up", "scalars_up"),
    ("down", "scalars_down"),
    ("eps", "epsilon"),
)

FORMATS = ("csv", "jsonl")


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _json_value(value: Any) -> Any:
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _from_json_value(value: Any) -> Any:
    if value in ("inf", "-inf"):
        return float(value)
    return value


def emit_report(
    records: Sequence[Dict[str, Any]],
    destination: Union[str, os.PathLike],
    format: ReportFormat = "csv",
) -> None:
    """
    Write ``records`` to ``destination``.

    :raises ValueError: for an empty record list or an unknown format.
    :raises OSError: when the destination can't be written.
    """
    if not records:
        raise ValueError("No records to report")
    if format not in FORMATS:
        raise ValueError(f"Unknown report format {format!r}")
    with open(destination, "w", newline="") as output:
        if format == "csv":
            writer = csv.writer(output, lineterminator="\n")
            writer.writerow([column for column, _ in CSV_COLUMNS])
            for record in records:
                writer.writerow([_csv_cell(record[key]) for _, key in CSV_COLUMNS])
        else:
            for record in records:
                line = {key: _json_value(value) for key, value in record.items()}
                output.write(json.dumps(line, allow_nan=False) + "\n")


def load_records(path: Union[str, os.PathLike]) -> List[Dict[str, Any]]:
    """
    Read the records of a ``jsonl`` report.
    """
    records = []
    with open(path) as report:
        for line in report:
            if line.strip():
                records.append(
                    {
                        key: _from_json_value(value)
                        for key, value in json.loads(line).items()
                    }
                )
    return records
