import math

import pytest

from fedmood.reports import CSV_COLUMNS, emit_report, load_records


def record(round, epsilon=None, **overrides):
    result = {
        "round": round,
        "protocol": "dp-fedavg",
        "participants": 3,
        "train_loss": None if round == 0 else 0.5,
        "loss": 0.1 * (3 - round),
        "accuracy": 0.25 * round,
        "f1": 0.2 * round,
        "user_accuracy": None,
        "scalars_up": 100 * round,
        "scalars_down": 200 * round,
        "epsilon": epsilon,
    }
    result.update(overrides)
    return result


RECORDS = [record(0, 0.0), record(1, 1.25), record(2, math.inf)]


def test_csv(tmp_path):
    path = tmp_path / "metrics.csv"
    emit_report(RECORDS, path, "csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == "round,loss,acc,f1,up,down,eps"
    assert lines[1] == "0,0.30000000000000004,0.0,0.0,0,0,0.0"
    assert lines[3].endswith(",200,400,inf")


def test_csv_columns():
    assert [column for column, _ in CSV_COLUMNS] == [
        "round",
        "loss",
        "acc",
        "f1",
        "up",
        "down",
        "eps",
    ]


def test_csv_missing_value(tmp_path):
    path = tmp_path / "metrics.csv"
    emit_report([record(1)], path)
    assert path.read_text().splitlines()[1].endswith(",100,200,")


def test_jsonl_round_trip(tmp_path):
    path = tmp_path / "metrics.jsonl"
    emit_report(RECORDS, path, "jsonl")
    assert '"epsilon": "inf"' in path.read_text().splitlines()[2]
    assert load_records(path) == RECORDS


def test_output_is_stable(tmp_path):
    emit_report(RECORDS, tmp_path / "a.jsonl", "jsonl")
    emit_report(list(RECORDS), tmp_path / "b.jsonl", "jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path / "metrics.csv")


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(RECORDS, tmp_path / "metrics.xml", "xml")


def test_unwritable_destination(tmp_path):
    with pytest.raises(OSError):
        emit_report(RECORDS, tmp_path / "missing" / "metrics.csv")
