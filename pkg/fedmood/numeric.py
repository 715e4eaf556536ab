"""
Dense float64 linear algebra, activations and seeded randomness.

Matrices and vectors are plain ``numpy`` arrays of ``float64`` in row-major
(C) order; the helpers here validate shapes and finiteness so that the rest of
the package can rely on them.
"""
import math
import zlib
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

from fedmood.base import ShapeError

Vector = np.ndarray
Matrix = np.ndarray

StreamKey = Union[int, str]


def _check_finite(value: np.ndarray, operation: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{operation}: result has non-finite entries")
    return value


def vector(data) -> Vector:
    """
    Return ``data`` as a one dimensional float64 vector.
    """
    value = np.ascontiguousarray(data, dtype=np.float64)
    if value.ndim != 1 or value.size == 0:
        raise ShapeError("vector", "(n,) with n >= 1", value.shape)
    return _check_finite(value, "vector")


def matrix(data) -> Matrix:
    """
    Return ``data`` as a two dimensional, row-major float64 matrix.
    """
    value = np.ascontiguousarray(data, dtype=np.float64)
    if value.ndim != 2 or value.size == 0:
        raise ShapeError("matrix", "(rows, cols) with rows, cols >= 1", value.shape)
    return _check_finite(value, "matrix")


class Rng:
    """
    A counter-based (Philox) random stream identified by a seed and a key.

    Streams are never shared: use :meth:`child` to derive an independent stream
    for a client, a round or a purpose. A child stream depends only on the seed
    and its key, so adding clients or changing the execution order never
    changes the draws of another stream.
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(key)
        self._generator: Optional[np.random.Generator] = None

    def __repr__(self):
        return f"{self.__class__.__name__}(seed={self.seed!r}, key={self.key!r})"

    @staticmethod
    def stream_key(key: StreamKey) -> int:
        if isinstance(key, str):
            return zlib.crc32(key.encode("utf-8"))
        key = int(key)
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return key

    def child(self, *keys: StreamKey) -> "Rng":
        return Rng(self.seed, self.key + tuple(self.stream_key(k) for k in keys))

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
            self._generator = np.random.Generator(np.random.Philox(sequence))
        return self._generator


def matvec(m: Matrix, v: Vector) -> Vector:
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(
            "matvec", f"(rows, {v.shape[0]}) x ({v.shape[0]},)", (m.shape, v.shape)
        )
    return _check_finite(m @ v, "matvec")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


UNARY_OPS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "relu": relu,
}

BINARY_OPS: Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "mul": np.multiply,
    "add": np.add,
    "sub": np.subtract,
}


def elementwise(op: str, a: Vector, b: Optional[Vector] = None) -> Vector:
    """
    Apply a pointwise operation.

    Unary operations are ``sigmoid``, ``tanh`` and ``relu``; binary operations
    are ``mul``, ``add`` and ``sub`` and need two vectors of equal length.
    """
    if op in UNARY_OPS:
        if b is not None:
            raise ValueError(f"{op} takes a single operand")
        return _check_finite(UNARY_OPS[op](a), op)
    if op in BINARY_OPS:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        if a.shape != b.shape:
            raise ShapeError(op, a.shape, b.shape)
        return _check_finite(BINARY_OPS[op](a, b), op)
    raise ValueError(f"Unknown elementwise operation {op!r}")


def l2_norm(v: Vector) -> float:
    return float(np.linalg.norm(v))


def gaussian_sample(rng: Rng, mean: float, std: float, n: int) -> Vector:
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    if std == 0:
        return np.full(n, float(mean))
    return rng.generator.normal(mean, std, n)


def glorot_uniform(rng: Rng, shape: Sequence[int]) -> np.ndarray:
    """
    Draw a tensor from ``uniform(-r, r)`` with ``r = sqrt(6 / (fan_in + fan_out))``.

    The last axis is the fan in and the one before it the fan out; a one
    dimensional tensor uses its length for both.
    """
    fan_in = shape[-1]
    fan_out = shape[-2] if len(shape) > 1 else shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.generator.uniform(-limit, limit, size=tuple(shape))


def accumulate(target: np.ndarray, value: np.ndarray, scale: float = 1.0) -> None:
    """
    In-place ``target += scale * value``.
    """
    if target.shape != value.shape:
        raise ShapeError("accumulate", target.shape, value.shape)
    target += scale * value


def batch_softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise version of :func:`softmax_cross_entropy`.

    :returns: ``(losses, dlogits)`` with one loss per row.
    """
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            "softmax_cross_entropy", ("B", "c"), (logits.shape, labels.shape)
        )
    classes = logits.shape[1]
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError(f"labels must be in [0, {classes})")
    rows = np.arange(logits.shape[0])
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = logsumexp(shifted, axis=1)
    losses = log_norm - shifted[rows, labels]
    dlogits = np.exp(shifted - log_norm[:, None])
    dlogits[rows, labels] -= 1.0
    return losses, dlogits


def softmax_cross_entropy(logits: Vector, label: int) -> Tuple[float, Vector]:
    """
    Cross-entropy of ``softmax(logits)`` against a class index, with the
    gradient with respect to the logits.
    """
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    losses, dlogits = batch_softmax_cross_entropy(
        logits[None, :], np.array([label], dtype=np.int64)
    )
    return float(losses[0]), dlogits[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)
