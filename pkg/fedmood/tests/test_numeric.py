import math

import numpy as np
import pytest
from django.test import SimpleTestCase

from fedmood import numeric
from fedmood.base import ShapeError
from fedmood.numeric import Rng


class TestRng(SimpleTestCase):
    def test_same_key_same_draws(self):
        a = Rng(7).child("client", 3).generator.normal(size=5)
        b = Rng(7).child("client", 3).generator.normal(size=5)
        np.testing.assert_array_equal(a, b)

    def test_children_are_independent(self):
        a = Rng(7).child("client", 3).generator.normal(size=5)
        b = Rng(7).child("client", 4).generator.normal(size=5)
        c = Rng(8).child("client", 3).generator.normal(size=5)
        self.assertFalse(np.allclose(a, b))
        self.assertFalse(np.allclose(a, c))

    def test_child_ignores_sibling_use(self):
        root = Rng(1)
        expected = root.child("noise", 2).generator.uniform()
        root.child("noise", 1).generator.uniform(size=100)
        self.assertEqual(Rng(1).child("noise", 2).generator.uniform(), expected)

    def test_string_keys(self):
        self.assertEqual(Rng(0).child("init").key, (Rng.stream_key("init"),))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            Rng(-1)
        with self.assertRaises(ValueError):
            Rng(0).child(-3)


class TestPrimitives(SimpleTestCase):
    def test_matvec(self):
        m = numeric.matrix([[1, 2], [3, 4], [5, 6]])
        np.testing.assert_array_equal(
            numeric.matvec(m, numeric.vector([1, -1])), [-1, -1, -1]
        )

    def test_matvec_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            numeric.matvec(numeric.matrix([[1, 2]]), numeric.vector([1, 2, 3]))

    def test_non_finite_input(self):
        with self.assertRaises(ValueError):
            numeric.vector([1.0, math.nan])

    def test_elementwise(self):
        a = numeric.vector([-1.0, 0.0, 2.0])
        b = numeric.vector([1.0, 1.0, 1.0])
        np.testing.assert_array_equal(numeric.elementwise("relu", a), [0, 0, 2])
        np.testing.assert_array_equal(numeric.elementwise("sub", a, b), [-2, -1, 1])
        self.assertEqual(numeric.elementwise("sigmoid", a)[1], 0.5)

    def test_elementwise_errors(self):
        a = numeric.vector([1.0, 2.0])
        with self.assertRaises(ShapeError):
            numeric.elementwise("mul", a, numeric.vector([1.0]))
        with self.assertRaises(ValueError):
            numeric.elementwise("mul", a)
        with self.assertRaises(ValueError):
            numeric.elementwise("tanh", a, a)
        with self.assertRaises(ValueError):
            numeric.elementwise("cube", a)

    def test_l2_norm(self):
        self.assertEqual(numeric.l2_norm(numeric.vector([3.0, 4.0])), 5.0)

    def test_gaussian_sample_zero_std(self):
        np.testing.assert_array_equal(
            numeric.gaussian_sample(Rng(0), 1.5, 0.0, 3), [1.5, 1.5, 1.5]
        )
        with self.assertRaises(ValueError):
            numeric.gaussian_sample(Rng(0), 0.0, -1.0, 3)

    def test_glorot_range(self):
        weights = numeric.glorot_uniform(Rng(0), (20, 30))
        self.assertEqual(weights.shape, (20, 30))
        self.assertLessEqual(np.abs(weights).max(), math.sqrt(6 / 50))

    def test_accumulate(self):
        target = np.ones(3)
        numeric.accumulate(target, np.arange(3.0), scale=2.0)
        np.testing.assert_array_equal(target, [1, 3, 5])
        with self.assertRaises(ShapeError):
            numeric.accumulate(target, np.ones(2))


class TestSoftmaxCrossEntropy(SimpleTestCase):
    def test_uniform_logits(self):
        loss, grad = numeric.softmax_cross_entropy(numeric.vector([0.0, 0.0]), 0)
        self.assertAlmostEqual(loss, math.log(2))
        np.testing.assert_allclose(grad, [-0.5, 0.5])

    def test_gradient_sums_to_zero(self):
        _, grad = numeric.softmax_cross_entropy(numeric.vector([3.0, -1.0, 0.5]), 2)
        self.assertAlmostEqual(float(grad.sum()), 0.0)

    def test_large_logits_are_stable(self):
        loss, grad = numeric.softmax_cross_entropy(numeric.vector([1000.0, 0.0]), 0)
        self.assertEqual(loss, 0.0)
        self.assertTrue(np.all(np.isfinite(grad)))

    def test_label_out_of_range(self):
        with self.assertRaises(ValueError):
            numeric.softmax_cross_entropy(numeric.vector([0.0, 0.0]), 2)

    def test_batch_matches_rows(self):
        logits = np.array([[1.0, 2.0, 3.0], [0.5, -0.5, 0.0]])
        losses, grads = numeric.batch_softmax_cross_entropy(logits, np.array([2, 0]))
        for row, label in enumerate([2, 0]):
            loss, grad = numeric.softmax_cross_entropy(logits[row], label)
            self.assertAlmostEqual(losses[row], loss)
            np.testing.assert_allclose(grads[row], grad)


@pytest.mark.parametrize("logits", [[0.0, 0.0, 0.0], [5.0, -2.0, 1.0]])
def test_softmax_is_a_distribution(logits):
    probabilities = numeric.softmax(np.array(logits))
    assert probabilities.sum() == pytest.approx(1.0)
    assert np.all(probabilities > 0)


def test_gaussian_sample_mean():
    sample = numeric.gaussian_sample(Rng(0), 0.0, 1.0, 10**5)
    assert abs(sample.mean()) < 0.02


@pytest.mark.parametrize("seed", range(5))
def test_matvec_distributes(seed):
    generator = Rng(seed).generator
    m = generator.normal(size=(4, 3))
    a, b = generator.normal(size=3), generator.normal(size=3)
    np.testing.assert_allclose(
        numeric.matvec(m, a + b),
        numeric.matvec(m, a) + numeric.matvec(m, b),
        atol=1e-12,
    )


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_gradient(seed):
    logits = Rng(seed).generator.normal(size=4)
    _, grad = numeric.softmax_cross_entropy(logits, seed % 4)
    eps = 1e-6
    for i in range(4):
        shift = np.eye(4)[i] * eps
        plus, _ = numeric.softmax_cross_entropy(logits + shift, seed % 4)
        minus, _ = numeric.softmax_cross_entropy(logits - shift, seed % 4)
        assert abs((plus - minus) / (2 * eps) - grad[i]) < 1e-6
