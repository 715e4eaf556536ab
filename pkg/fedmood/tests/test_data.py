import math

import numpy as np
import pytest
from django.test import SimpleTestCase

from fedmood import data
from fedmood.base import SPECIAL_KEYS


class TestSegmentSessions(SimpleTestCase):
    def test_split_at_gap(self):
        self.assertEqual(
            data.segment_sessions([0, 1, 2, 10, 11]), [range(0, 3), range(3, 5)]
        )

    def test_gap_is_inclusive(self):
        self.assertEqual(data.segment_sessions([0, 5]), [range(0, 1), range(1, 2)])

    def test_just_below_gap(self):
        self.assertEqual(data.segment_sessions([0, 4.999]), [range(0, 2)])

    def test_custom_gap(self):
        self.assertEqual(len(data.segment_sessions([0, 1, 2], gap=1)), 3)

    def test_setting_gap(self):
        with self.settings(FEDMOOD_SESSION_GAP=20.0):
            self.assertEqual(data.segment_sessions([0, 1, 2, 10, 11]), [range(0, 5)])

    def test_empty(self):
        self.assertEqual(data.segment_sessions([]), [])

    def test_keypress_log(self):
        log = data.KeypressLog(np.array([0.0, 6.0]), np.zeros((2, 3)))
        self.assertEqual(len(data.segment_sessions(log)), 2)

    def test_unordered(self):
        with self.assertRaises(ValueError):
            data.segment_sessions([0, 2, 1])


class TestGenClassification(SimpleTestCase):
    def test_deterministic(self):
        a = data.gen_classification(3, 100, 3, 4, 2.0)
        b = data.gen_classification(3, 100, 3, 4, 2.0)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_balanced(self):
        dataset = data.gen_classification(0, 100, 4, 10, 3.0)
        self.assertEqual(np.bincount(dataset.labels).tolist(), [25] * 4)
        self.assertEqual(dataset.dim, 10)

    def test_separated_means(self):
        dataset = data.gen_classification(0, 4000, 2, 3, 5.0)
        mean = dataset.features[dataset.labels == 1].mean(axis=0)
        np.testing.assert_allclose(mean, [0.0, 5.0, 0.0], atol=0.15)

    def test_no_separation(self):
        dataset = data.gen_classification(0, 10000, 4, 3, 0.0)
        means = [dataset.features[dataset.labels == c].mean(axis=0) for c in range(4)]
        np.testing.assert_allclose(means, 0.0, atol=0.1)

    def test_more_classes_than_dimensions(self):
        dataset = data.gen_classification(0, 50, 5, 2, 1.0)
        self.assertEqual(dataset.features.shape, (50, 2))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            data.gen_classification(0, 1, 2, 3, 1.0)
        with self.assertRaises(ValueError):
            data.gen_classification(0, 10, 2, 3, -1.0)

    def test_subset(self):
        dataset = data.gen_classification(0, 10, 2, 3, 1.0)
        subset = dataset.subset([1, 3])
        self.assertEqual(len(subset), 2)
        np.testing.assert_array_equal(subset[1].features, dataset[3].features)
        self.assertEqual(subset[1].label, dataset[3].label)


class TestGenMultiviewSessions(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = data.gen_multiview_sessions(1, users=3, sessions_per_user=20)

    def test_counts(self):
        self.assertEqual(len(self.dataset), 60)
        self.assertEqual(np.bincount(self.dataset.users).tolist(), [20, 20, 20])
        self.assertEqual(np.bincount(self.dataset.labels).tolist(), [30, 30])

    def test_views(self):
        for session in self.dataset:
            alphanumeric, special, accelerometer = session.views
            self.assertEqual(alphanumeric.shape[1], 4)
            self.assertEqual(special.shape[1], len(SPECIAL_KEYS))
            self.assertEqual(accelerometer.shape[1], 3)
            self.assertGreaterEqual(len(alphanumeric), 1)
            self.assertGreaterEqual(len(special), 1)
            np.testing.assert_array_equal(special.sum(axis=1), 1.0)

    def test_accelerometer_cadence(self):
        for session in self.dataset:
            self.assertGreater(session.duration, 0)
            self.assertLess(session.duration, 60.0)
            self.assertEqual(
                len(session.accelerometer), math.ceil(session.duration / 0.060)
            )

    def test_deterministic(self):
        again = data.gen_multiview_sessions(1, users=3, sessions_per_user=20)
        for a, b in zip(self.dataset, again):
            for view_a, view_b in zip(a.views, b.views):
                np.testing.assert_array_equal(view_a, view_b)

    def test_standardized(self):
        rows = np.concatenate([session.alphanumeric for session in self.dataset])
        np.testing.assert_allclose(rows.mean(axis=0), 0.0, atol=1e-9)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            data.gen_multiview_sessions(0, users=0, sessions_per_user=1)
        with self.assertRaises(ValueError):
            data.gen_multiview_sessions(
                0, 1, 1, data.SignalSpec(classes=2, strength=-1.0)
            )


class TestPartition(SimpleTestCase):
    def assertCovers(self, split, n):
        indices = [i for chunk in split.clients.values() for i in chunk]
        self.assertEqual(sorted(indices), list(range(n)))

    def test_iid(self):
        labels = np.arange(10000) % 10
        split = data.partition(labels, 10, "iid", seed=0)
        self.assertCovers(split, 10000)
        for indices in split.clients.values():
            self.assertEqual(len(indices), 1000)
            share = np.bincount(labels[indices], minlength=10) / len(indices)
            self.assertLessEqual(np.abs(share - 0.1).sum() / 2, 0.1, share)

    def test_non_iid_label_shards(self):
        labels = np.arange(1000) % 10
        split = data.partition(labels, 10, "non-iid", seed=0, shards_per_client=2)
        self.assertCovers(split, 1000)
        for indices in split.clients.values():
            self.assertLessEqual(len(np.unique(labels[indices])), 2)

    def test_single_client(self):
        split = data.partition(np.zeros(7), 1, "iid", seed=4)
        self.assertEqual(split.clients, {0: list(range(7))})

    def test_deterministic(self):
        labels = np.arange(50) % 2
        self.assertEqual(
            data.partition(labels, 5, "non-iid", seed=1),
            data.partition(labels, 5, "non-iid", seed=1),
        )

    def test_too_many_clients(self):
        with self.assertRaises(ValueError):
            data.partition(np.zeros(3), 4)

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            data.partition(np.zeros(3), 1, "dirichlet")


def test_train_test_split():
    train, test = data.train_test_split(100, 0.2, seed=0)
    assert len(test) == 20
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(100))
    with pytest.raises(ValueError):
        data.train_test_split(100, 1.0, seed=0)


def test_save_load_classification(tmp_path):
    dataset = data.gen_classification(2, 30, 3, 4, 1.5)
    data.save_dataset(dataset, tmp_path)
    loaded = data.load_dataset(tmp_path)
    assert loaded.kind == "classification"
    assert loaded.classes == 3
    np.testing.assert_array_equal(loaded.features, dataset.features)
    np.testing.assert_array_equal(loaded.labels, dataset.labels)


def test_save_load_sessions(tmp_path):
    dataset = data.gen_multiview_sessions(2, users=2, sessions_per_user=4)
    data.save_dataset(dataset, tmp_path)
    assert (tmp_path / "accelerometer.csv").read_text().startswith(
        "session,step,ax,ay,az\n"
    )
    loaded = data.load_dataset(tmp_path)
    assert len(loaded) == len(dataset)
    for a, b in zip(dataset, loaded):
        assert (a.label, a.user, a.duration) == (b.label, b.user, b.duration)
        for view_a, view_b in zip(a.views, b.views):
            np.testing.assert_array_equal(view_a, view_b)


def test_load_unknown_kind(tmp_path):
    (tmp_path / "dataset.json").write_text('{"kind": "images"}')
    with pytest.raises(ValueError):
        data.load_dataset(tmp_path)
