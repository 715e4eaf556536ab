import math
import tempfile

import numpy as np
import pytest
from django.test import SimpleTestCase
from rest_framework.exceptions import ValidationError

from fedmood import data, networks
from fedmood.base import ShapeError
from fedmood.experiment import (
    Experiment,
    compare_protocols,
    dump_config,
    f1_macro,
    first_target_record,
    load_config,
    run_experiment,
    validate_config,
)


def small_config(**overrides):
    config = {
        "workload": "mlp",
        "dataset": {"n": 120, "classes": 2, "dim": 4, "separation": 3.0},
        "hidden": [6],
        "protocol": "fedavg",
        "clients": 4,
        "rounds": 4,
        "eval_every": 1,
        "lr": 0.1,
        "seed": 0,
    }
    config.update(overrides)
    return config


def sessions_config(**overrides):
    config = {
        "workload": "multiview-gru",
        "dataset": {"users": 2, "sessions_per_user": 10},
        "hidden_dim": 3,
        "head_size": 2,
        "protocol": "fedavg",
        "clients": 2,
        "rounds": 2,
        "eval_every": 1,
        "seed": 0,
    }
    config.update(overrides)
    return config


class TestF1Macro(SimpleTestCase):
    def test_perfect(self):
        self.assertEqual(f1_macro([0, 1, 2], [0, 1, 2]), 1.0)

    def test_all_wrong(self):
        self.assertEqual(f1_macro([1, 0, 1], [0, 1, 0]), 0.0)

    def test_mixed(self):
        self.assertAlmostEqual(f1_macro([0, 0, 1], [0, 1, 1]), 2 / 3)

    def test_absent_classes_are_excluded(self):
        self.assertEqual(f1_macro([3, 3], [3, 3]), 1.0)

    def test_errors(self):
        with self.assertRaises(ValueError):
            f1_macro([], [])
        with self.assertRaises(ShapeError):
            f1_macro([0, 1], [0])


class TestFirstTargetRecord(SimpleTestCase):
    records = [
        {"round": round, "accuracy": accuracy}
        for round, accuracy in enumerate([1.0, 0.6, 1.0, 1.0, 1.0])
    ]

    def test_moving_average(self):
        self.assertEqual(first_target_record(self.records, 0.9, 3)["round"], 4)
        self.assertEqual(first_target_record(self.records, 0.9, 1)["round"], 2)

    def test_not_reached(self):
        self.assertIsNone(first_target_record(self.records, 0.9, 10))

    def test_initial_record_is_ignored(self):
        self.assertIsNone(first_target_record(self.records[:1], 0.5, 1))


class TestRunExperiment(SimpleTestCase):
    def test_no_rounds(self):
        records = run_experiment(small_config(rounds=0))
        self.assertEqual(len(records), 1)
        record = records[0]
        self.assertEqual(record["round"], 0)
        self.assertEqual(record["participants"], 0)
        self.assertIsNone(record["train_loss"])
        self.assertEqual((record["scalars_up"], record["scalars_down"]), (0, 0))
        self.assertIsNone(record["epsilon"])
        self.assertIsNone(record["user_accuracy"])

    def test_deterministic(self):
        config = small_config(rounds=3, batch_size=8, local_steps=2)
        self.assertEqual(run_experiment(config), run_experiment(config))

    def test_centralized_equals_single_client_fedavg(self):
        central = run_experiment(
            small_config(protocol="centralized", clients=1, rounds=10, batch_size=16)
        )
        federated = run_experiment(
            small_config(clients=1, rounds=10, batch_size=16, local_steps=1)
        )
        self.assertEqual(len(central), len(federated))
        for a, b in zip(central, federated):
            self.assertEqual(a["round"], b["round"])
            self.assertLessEqual(abs(a["loss"] - b["loss"]), 1e-10)
        self.assertEqual(central[-1]["scalars_up"], 0)
        self.assertGreater(federated[-1]["scalars_up"], 0)

    def test_evaluation_cadence(self):
        records = run_experiment(small_config(rounds=7, eval_every=3))
        self.assertEqual([record["round"] for record in records], [0, 3, 6, 7])

    def test_cumulative_communication(self):
        experiment = Experiment(small_config(rounds=3))
        records = experiment.run()
        dim = experiment.server.params.layout.size
        self.assertEqual(
            [record["scalars_up"] for record in records],
            [0, 4 * dim, 8 * dim, 12 * dim],
        )

    def test_selective(self):
        records = run_experiment(
            small_config(protocol="selective", upload_fraction=0.2, rounds=2)
        )
        self.assertEqual(records[-1]["protocol"], "selective")
        self.assertLess(records[-1]["scalars_up"], records[-1]["scalars_down"])

    def test_private(self):
        experiment = Experiment(
            small_config(
                protocol="dp-fedavg",
                sampling_probability=0.5,
                clip_bound=1.0,
                noise_multiplier=1.1,
                rounds=3,
            )
        )
        records = experiment.run()
        epsilons = [record["epsilon"] for record in records]
        self.assertEqual(epsilons[0], 0.0)
        self.assertEqual(epsilons, sorted(epsilons))
        self.assertGreater(epsilons[-1], 0)
        self.assertEqual(len(experiment.ledger), 3)

    def test_stop_at_target(self):
        records = run_experiment(
            small_config(rounds=50, target_accuracy=0.0, stop_at_target=True)
        )
        self.assertEqual([record["round"] for record in records], [0, 1, 2, 3])

    def test_target_window_setting(self):
        with self.settings(FEDMOOD_TARGET_WINDOW=1):
            records = run_experiment(
                small_config(rounds=50, target_accuracy=0.0, stop_at_target=True)
            )
        self.assertEqual(len(records), 2)

    def test_target_window_attribute(self):
        class QuickExperiment(Experiment):
            target_window = 2

        records = QuickExperiment(
            small_config(rounds=50, target_accuracy=0.0, stop_at_target=True)
        ).run()
        self.assertEqual(len(records), 3)

    def test_non_iid(self):
        records = run_experiment(
            small_config(partition="non-iid", shards_per_client=2, rounds=1)
        )
        self.assertEqual(records[-1]["participants"], 4)

    def test_sessions(self):
        for head in ("fc", "fm", "mvm"):
            records = run_experiment(sessions_config(head=head))
            self.assertEqual(len(records), 3)
            self.assertIsNotNone(records[-1]["user_accuracy"])

    def test_invalid_config_fails_before_running(self):
        with self.assertRaises(ValidationError):
            Experiment(small_config(noise_multiplier=1.0))

    def test_saved_dataset(self):
        dataset = data.gen_classification(5, 80, 2, 4, 3.0)
        with tempfile.TemporaryDirectory() as directory:
            data.save_dataset(dataset, directory)
            experiment = Experiment(small_config(dataset={"path": directory}))
            experiment.setup()
        self.assertEqual(len(experiment.train) + len(experiment.test), 80)

    def test_saved_dataset_of_wrong_kind(self):
        dataset = data.gen_multiview_sessions(0, 1, 4)
        with tempfile.TemporaryDirectory() as directory:
            data.save_dataset(dataset, directory)
            with self.assertRaises(ValueError):
                run_experiment(small_config(dataset={"path": directory}))


class TestTraces(SimpleTestCase):
    def test_one_trace_per_round(self):
        experiment = Experiment(small_config(rounds=7, eval_every=3))
        records = experiment.run()
        traces = experiment.traces
        self.assertEqual([trace["round"] for trace in traces], list(range(1, 8)))
        self.assertEqual(
            [trace["accuracy"] is not None for trace in traces],
            [False, False, True, False, False, True, True],
        )
        self.assertEqual(traces[2]["accuracy"], records[1]["accuracy"])
        self.assertEqual(traces[0]["participants"], [0, 1, 2, 3])
        self.assertEqual(
            sum(trace["scalars_up"] for trace in traces), records[-1]["scalars_up"]
        )
        self.assertIsNone(traces[0]["epsilon_so_far"])

    def test_private_epsilon_so_far(self):
        experiment = Experiment(
            small_config(
                protocol="dp-fedavg",
                sampling_probability=0.5,
                clip_bound=1.0,
                noise_multiplier=1.1,
                rounds=3,
            )
        )
        records = experiment.run()
        epsilons = [trace["epsilon_so_far"] for trace in experiment.traces]
        self.assertEqual(epsilons, sorted(set(epsilons)))
        self.assertEqual(epsilons[-1], records[-1]["epsilon"])

    def test_centralized_transfers_nothing(self):
        experiment = Experiment(small_config(protocol="centralized", rounds=2))
        experiment.run()
        for trace in experiment.traces:
            self.assertEqual((trace["scalars_up"], trace["scalars_down"]), (0, 0))
            self.assertEqual(trace["participants"], [0])


class TestResume(SimpleTestCase):
    def assert_resumes(self, config):
        full = Experiment(dict(config, rounds=4))
        full_records = full.run()
        first = Experiment(dict(config, rounds=2))
        first.run()
        rest = Experiment(dict(config, rounds=4))
        with tempfile.TemporaryDirectory() as directory:
            first.save_state(directory)
            rest_records = rest.run(resume_from=directory)
        np.testing.assert_array_equal(
            rest.server.params.values, full.server.params.values
        )
        self.assertEqual(rest.traces, full.traces[2:])
        self.assertEqual(rest_records[-1], full_records[-1])
        self.assertEqual([record["round"] for record in rest_records], [2, 3, 4])
        return rest

    def test_selective(self):
        self.assert_resumes(
            small_config(
                protocol="selective", upload_fraction=0.2, download_fraction=0.5
            )
        )

    def test_private(self):
        rest = self.assert_resumes(
            small_config(
                protocol="dp-fedavg",
                sampling_probability=0.5,
                clip_bound=1.0,
                noise_multiplier=1.1,
            )
        )
        self.assertEqual(len(rest.ledger), 4)

    def test_finished_run(self):
        first = Experiment(small_config(rounds=2))
        first.run()
        again = Experiment(small_config(rounds=2))
        with tempfile.TemporaryDirectory() as directory:
            first.save_state(directory)
            records = again.run(resume_from=directory)
        self.assertEqual(len(records), 1)
        self.assertEqual(again.traces, [])

    def test_other_protocol(self):
        first = Experiment(small_config(rounds=1))
        first.run()
        with tempfile.TemporaryDirectory() as directory:
            first.save_state(directory)
            with self.assertRaisesMessage(ValueError, "fedavg run"):
                Experiment(small_config(protocol="naive")).run(resume_from=directory)

    def test_save_before_running(self):
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(ValueError):
                Experiment(small_config()).save_state(directory)


class TestConfigFiles(SimpleTestCase):
    def test_round_trip(self):
        config = validate_config(
            small_config(protocol="dp-fedavg", noise_multiplier=0.0)
        )
        self.assertEqual(config["clip_bound"], math.inf)
        with tempfile.TemporaryDirectory() as directory:
            path = f"{directory}/config.json"
            dump_config(config, path)
            with open(path) as dumped:
                self.assertIn('"clip_bound": "inf"', dumped.read())
            self.assertEqual(load_config(path), config)


class TestCompareProtocols(SimpleTestCase):
    def test_identical_configs(self):
        config = small_config(rounds=6, target_accuracy=0.0)
        rows = compare_protocols([config, dict(config, name="again")])
        self.assertEqual([row["ratio"] for row in rows], [1.0, 1.0])
        self.assertEqual(rows[0]["name"], "config0")
        self.assertEqual(rows[1]["name"], "again")
        self.assertTrue(rows[0]["reached"])
        self.assertEqual(rows[0]["rounds_to_target"], 3)

    def test_not_reached(self):
        rows = compare_protocols([small_config(rounds=2)])
        self.assertFalse(rows[0]["reached"])
        self.assertIsNone(rows[0]["ratio"])
        self.assertIsNone(rows[0]["scalars_up_to_target"])

    def test_private_column(self):
        rows = compare_protocols(
            [
                small_config(rounds=2),
                small_config(
                    protocol="dp-fedavg", clip_bound=1.0, noise_multiplier=1.0, rounds=2
                ),
            ]
        )
        self.assertIsNone(rows[0]["epsilon"])
        self.assertGreater(rows[1]["epsilon"], 0)

    def test_configs_must_share_data(self):
        with self.assertRaises(ValueError):
            compare_protocols([small_config(), small_config(seed=1)])
        with self.assertRaises(ValueError):
            compare_protocols([])


def communication_config(local_steps):
    return {
        "name": f"fedavg-e{local_steps}",
        "workload": "mlp",
        "dataset": {"n": 2000, "classes": 4, "dim": 10, "separation": 4.0},
        "hidden": [16],
        "protocol": "fedavg",
        "clients": 10,
        "partition": "iid",
        "rounds": 2000,
        "lr": 0.005,
        "local_steps": local_steps,
        "eval_every": 1,
        "target_accuracy": 0.9,
        "stop_at_target": True,
        "seed": 0,
    }


@pytest.mark.slow
def test_local_steps_reduce_communication():
    single, many = compare_protocols(
        [communication_config(1), communication_config(20)]
    )
    assert single["reached"] and many["reached"]
    assert many["ratio"] >= 5


@pytest.mark.slow
def test_sparse_uploads_reach_target():
    def rounds_to_target(upload_fraction):
        config = small_config(
            dataset={"n": 2000, "classes": 2, "dim": 10, "separation": 4.0},
            hidden=[16],
            protocol="selective",
            clients=10,
            upload_fraction=upload_fraction,
            download_fraction=1.0,
            lr=0.05,
            rounds=500,
            target_accuracy=0.9,
            stop_at_target=True,
        )
        return compare_protocols([config])[0]["rounds_to_target"]

    full = rounds_to_target(1.0)
    sparse = rounds_to_target(0.1)
    assert full is not None and sparse is not None
    assert sparse <= 5 * full


def session_accuracy(strength, rounds):
    experiment = Experiment(
        {
            "workload": "multiview-gru",
            "dataset": {"users": 20, "sessions_per_user": 200, "strength": strength},
            "head": "fc",
            "hidden_dim": 8,
            "protocol": "centralized",
            "rounds": rounds,
            "eval_every": rounds,
            "lr": 0.5,
            "batch_size": 64,
            "seed": 0,
        }
    )
    records = experiment.run()
    model = experiment.server.model.with_params(experiment.server.params)
    _, predictions = networks.evaluate(model, experiment.train)
    train_accuracy = float(np.mean(predictions == experiment.train.labels))
    return train_accuracy, records[-1]["accuracy"]


@pytest.mark.slow
def test_sessions_planted_signal():
    train_accuracy, test_accuracy = session_accuracy(1.0, 600)
    assert train_accuracy >= 0.95
    assert test_accuracy >= 0.85


@pytest.mark.slow
def test_sessions_null_signal():
    _, test_accuracy = session_accuracy(0.0, 100)
    assert abs(test_accuracy - 0.5) <= 0.05
