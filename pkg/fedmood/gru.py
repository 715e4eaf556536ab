"""
A gated recurrent unit without bias terms, with backpropagation through time.

One step updates the hidden state as::

    r = sigmoid(W_r x + U_r h)
    z = sigmoid(W_z x + U_z h)
    h~ = tanh(W x + U (r * h))
    h' = z * h + (1 - z) * h~

Every function accepts either single vectors or a batch with one row per
sequence.
"""
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from fedmood.base import ShapeError
from fedmood.numeric import sigmoid

WEIGHTS = ("W_r", "U_r", "W_z", "U_z", "W", "U")


class GruCache(NamedTuple):
    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    reset_h: np.ndarray
    h_tilde: np.ndarray


class GruCell:
    """
    The six weight matrices of one view's recurrent encoder.

    ``W_*`` matrices are ``hidden_dim x input_dim`` and ``U_*`` matrices are
    ``hidden_dim x hidden_dim``.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        weights: Optional[Mapping[str, np.ndarray]] = None,
    ):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.weights: Dict[str, np.ndarray] = {}
        for name, shape in self.shapes().items():
            if weights is None:
                value = np.zeros(shape)
            else:
                value = np.asarray(weights[name], dtype=np.float64)
            if value.shape != shape:
                raise ShapeError(f"GruCell.{name}", shape, value.shape)
            self.weights[name] = value

    def __repr__(self):
        return (
            f"{self.__class__.__name__}(input_dim={self.input_dim!r}, "
            f"hidden_dim={self.hidden_dim!r})"
        )

    def shapes(self) -> Dict[str, Tuple[int, int]]:
        return {
            name: (
                self.hidden_dim,
                self.input_dim if name.startswith("W") else self.hidden_dim,
            )
            for name in WEIGHTS
        }

    def __getattr__(self, attr):
        weights = self.__dict__.get("weights", {})
        if attr in weights:
            return weights[attr]
        raise AttributeError(attr)


def gru_step(
    cell: GruCell, x_k: np.ndarray, h_prev: np.ndarray
) -> Tuple[np.ndarray, GruCache]:
    if x_k.shape[-1] != cell.input_dim or h_prev.shape[-1] != cell.hidden_dim:
        raise ShapeError(
            "gru_step",
            (cell.input_dim, cell.hidden_dim),
            (x_k.shape, h_prev.shape),
        )
    w = cell.weights
    r = sigmoid(x_k @ w["W_r"].T + h_prev @ w["U_r"].T)
    z = sigmoid(x_k @ w["W_z"].T + h_prev @ w["U_z"].T)
    reset_h = r * h_prev
    h_tilde = np.tanh(x_k @ w["W"].T + reset_h @ w["U"].T)
    h_k = z * h_prev + (1.0 - z) * h_tilde
    return h_k, GruCache(x_k, h_prev, r, z, reset_h, h_tilde)


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Sum of outer products over batch rows; a plain outer product for vectors.
    return np.atleast_2d(a).T @ np.atleast_2d(b)


def gru_step_backward(
    cell: GruCell, cache: GruCache, dh: np.ndarray, grads: Dict[str, np.ndarray]
) -> np.ndarray:
    """
    Accumulate the weight gradients of one step into ``grads`` and return the
    gradient with respect to the previous hidden state.
    """
    w = cell.weights
    x, h_prev, r, z, reset_h, h_tilde = cache
    dz = dh * (h_prev - h_tilde)
    dh_prev = dh * z

    da_h = dh * (1.0 - z) * (1.0 - h_tilde**2)
    grads["W"] += _outer_sum(da_h, x)
    grads["U"] += _outer_sum(da_h, reset_h)
    d_reset_h = da_h @ w["U"]
    dr = d_reset_h * h_prev
    dh_prev = dh_prev + d_reset_h * r

    da_z = dz * z * (1.0 - z)
    grads["W_z"] += _outer_sum(da_z, x)
    grads["U_z"] += _outer_sum(da_z, h_prev)
    dh_prev = dh_prev + da_z @ w["U_z"]

    da_r = dr * r * (1.0 - r)
    grads["W_r"] += _outer_sum(da_r, x)
    grads["U_r"] += _outer_sum(da_r, h_prev)
    dh_prev = dh_prev + da_r @ w["U_r"]
    return dh_prev


def encode_view(
    cell: GruCell, seq: Sequence[np.ndarray]
) -> Tuple[np.ndarray, List[GruCache]]:
    """
    Fold :func:`gru_step` over a sequence starting from a zero hidden state and
    return the last hidden state.
    """
    if len(seq) == 0:
        raise ValueError("Can't encode an empty sequence")
    h = np.zeros(cell.hidden_dim)
    caches = []
    for x_k in seq:
        h, cache = gru_step(cell, np.asarray(x_k, dtype=np.float64), h)
        caches.append(cache)
    return h, caches


class BatchEncoding(NamedTuple):
    caches: List[GruCache]
    active: List[np.ndarray]


def encode_batch(
    cell: GruCell, sequences: Sequence[np.ndarray]
) -> Tuple[np.ndarray, BatchEncoding]:
    """
    Encode sequences of different lengths at once.

    Each sequence is a ``length x input_dim`` array. Rows whose sequence has
    ended keep their hidden state unchanged for the remaining steps.
    """
    if not len(sequences):
        raise ValueError("Can't encode an empty batch")
    lengths = np.array([len(seq) for seq in sequences])
    if lengths.min() < 1:
        raise ValueError("Can't encode an empty sequence")
    padded = np.zeros((len(sequences), int(lengths.max()), cell.input_dim))
    for row, seq in enumerate(sequences):
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 2 or seq.shape[1] != cell.input_dim:
            raise ShapeError("encode_batch", ("length", cell.input_dim), seq.shape)
        padded[row, : len(seq)] = seq
    h = np.zeros((len(sequences), cell.hidden_dim))
    encoding = BatchEncoding([], [])
    for k in range(padded.shape[1]):
        active = (k < lengths)[:, None]
        h_new, cache = gru_step(cell, padded[:, k], h)
        h = np.where(active, h_new, h)
        encoding.caches.append(cache)
        encoding.active.append(active)
    return h, encoding


def backward_batch(
    cell: GruCell,
    encoding: BatchEncoding,
    dh: np.ndarray,
    grads: Dict[str, np.ndarray],
) -> None:
    for cache, active in zip(reversed(encoding.caches), reversed(encoding.active)):
        dh_prev = gru_step_backward(cell, cache, np.where(active, dh, 0.0), grads)
        dh = np.where(active, dh_prev, dh)
