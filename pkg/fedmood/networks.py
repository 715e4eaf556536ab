"""
Trainable models with exact analytic gradients.

Two workloads are provided: a multi-layer perceptron over feature vectors and
a multi-view recurrent model that encodes each view of a typing session with
its own :class:`~fedmood.gru.GruCell` and fuses the encodings with one of the
heads in :mod:`fedmood.fusion`.

Models own a :class:`~fedmood.params.ParamVector`; components read their
tensors as views into it, and gradients come back in the same layout.
"""
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fedmood import fusion, gru
from fedmood.base import LayoutError, ShapeError, VIEW_FEATURES, VIEW_NAMES
from fedmood.numeric import (
    Rng,
    batch_softmax_cross_entropy,
    glorot_uniform,
    relu,
    softmax,
)
from fedmood.params import Layout, ParamVector

logger = logging.getLogger(__name__)

EVAL_CHUNK = 256


def _label(sample: Any) -> int:
    return int(sample.label)


class Model:
    """
    Common interface of the workloads.

    Subclasses define ``layout_entries`` plus a batched forward and backward
    pass; everything else (initialization, loss, prediction) is shared.
    """

    classes: int

    def __init__(self, params: Optional[ParamVector] = None):
        self.layout = Layout(self.layout_entries())
        if params is None:
            params = ParamVector(self.layout)
        elif params.layout != self.layout:
            raise LayoutError(
                f"{self.__class__.__name__} expects {self.layout!r}, "
                f"got {params.layout!r}"
            )
        self.params = params

    def layout_entries(self) -> List[Tuple[str, Tuple[int, ...]]]:
        raise NotImplementedError

    def architecture(self) -> Dict[str, Any]:
        raise NotImplementedError

    def with_params(self, params: ParamVector) -> "Model":
        return self.__class__(params=params, **self.architecture())

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.architecture().items())
        return f"{self.__class__.__name__}({args})"

    def forward_batch(self, samples: Sequence[Any]) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward_batch(self, cache: Any, dlogits: np.ndarray) -> ParamVector:
        raise NotImplementedError


class MlpModel(Model):
    """
    Fully connected layers with relu in between and linear output logits.
    """

    def __init__(self, sizes: Sequence[int], params: Optional[ParamVector] = None):
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"Need at least two positive layer sizes, got {sizes}")
        self.sizes = tuple(int(size) for size in sizes)
        self.classes = self.sizes[-1]
        super().__init__(params)

    def layout_entries(self):
        entries = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes, self.sizes[1:])):
            entries.append((f"layer{i}.W", (fan_out, fan_in)))
            entries.append((f"layer{i}.b", (fan_out,)))
        return entries

    def architecture(self):
        return {"sizes": self.sizes}

    @property
    def depth(self) -> int:
        return len(self.sizes) - 1

    def _features(self, samples: Sequence[Any]) -> np.ndarray:
        features = np.stack(
            [np.asarray(getattr(s, "features", s), dtype=np.float64) for s in samples]
        )
        if features.ndim != 2 or features.shape[1] != self.sizes[0]:
            raise ShapeError("MlpModel", ("B", self.sizes[0]), features.shape)
        return features

    def forward_batch(self, samples):
        activations = [self._features(samples)]
        pre_activations = []
        for i in range(self.depth):
            pre = (
                activations[-1] @ self.params.tensor(f"layer{i}.W").T
                + self.params.tensor(f"layer{i}.b")
            )
            pre_activations.append(pre)
            if i < self.depth - 1:
                activations.append(relu(pre))
        return pre_activations[-1], (activations, pre_activations)

    def backward_batch(self, cache, dlogits):
        activations, pre_activations = cache
        grad = self.params.zeros_like()
        delta = dlogits
        for i in reversed(range(self.depth)):
            grad.tensor(f"layer{i}.W")[...] = delta.T @ activations[i]
            grad.tensor(f"layer{i}.b")[...] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.params.tensor(f"layer{i}.W")) * (
                    pre_activations[i - 1] > 0
                )
        return grad


class MultiViewGruModel(Model):
    """
    One recurrent encoder per view and a fusion head over their last states.
    """

    def __init__(
        self,
        input_dims: Sequence[int] = tuple(VIEW_FEATURES[view] for view in VIEW_NAMES),
        hidden_dim: int = 8,
        classes: int = 2,
        head: str = "fc",
        head_size: int = 8,
        params: Optional[ParamVector] = None,
    ):
        if head not in fusion.HEADS:
            raise ValueError(f"Unknown fusion head {head!r}")
        if not input_dims or min(input_dims) < 1 or hidden_dim < 1 or classes < 1:
            raise ValueError("Model dimensions must be positive")
        self.input_dims = tuple(int(dim) for dim in input_dims)
        self.hidden_dim = hidden_dim
        self.classes = classes
        self.head_kind = head
        self.head_size = head_size
        super().__init__(params)

    @property
    def views(self) -> int:
        return len(self.input_dims)

    def _empty_head(self) -> fusion.FusionHead:
        return fusion.HEADS[self.head_kind](
            self.views, self.hidden_dim, self.classes, self.head_size
        )

    def layout_entries(self):
        entries = []
        for p, input_dim in enumerate(self.input_dims):
            shapes = gru.GruCell(input_dim, self.hidden_dim).shapes()
            entries.extend(
                (f"view{p}.{name}", shape) for name, shape in shapes.items()
            )
        entries.extend(
            (f"head.{name}", shape)
            for name, shape in self._empty_head().shapes().items()
        )
        return entries

    def architecture(self):
        return {
            "input_dims": self.input_dims,
            "hidden_dim": self.hidden_dim,
            "classes": self.classes,
            "head": self.head_kind,
            "head_size": self.head_size,
        }

    def _tensors(self, params: ParamVector, prefix: str) -> Dict[str, np.ndarray]:
        return {
            entry.name[len(prefix) :]: params.tensor(entry.name)
            for entry in params.layout
            if entry.name.startswith(prefix)
        }

    @property
    def cells(self) -> List[gru.GruCell]:
        return [
            gru.GruCell(
                input_dim, self.hidden_dim, self._tensors(self.params, f"view{p}.")
            )
            for p, input_dim in enumerate(self.input_dims)
        ]

    @property
    def head(self) -> fusion.FusionHead:
        return fusion.HEADS[self.head_kind](
            self.views,
            self.hidden_dim,
            self.classes,
            self.head_size,
            self._tensors(self.params, "head."),
        )

    def forward_batch(self, samples):
        cells = self.cells
        encodings = []
        h_views = []
        for p, cell in enumerate(cells):
            sequences = [getattr(sample, "views", sample)[p] for sample in samples]
            h, encoding = gru.encode_batch(cell, sequences)
            h_views.append(h)
            encodings.append(encoding)
        head = self.head
        logits, head_cache = head.forward(h_views)
        return logits, (cells, encodings, head, head_cache)

    def backward_batch(self, cache, dlogits):
        cells, encodings, head, head_cache = cache
        grad = self.params.zeros_like()
        dh_views = head.backward(head_cache, dlogits, self._tensors(grad, "head."))
        for p, (cell, encoding) in enumerate(zip(cells, encodings)):
            gru.backward_batch(
                cell, encoding, dh_views[p], self._tensors(grad, f"view{p}.")
            )
        return grad


def init_params(model: Model, rng: Rng) -> ParamVector:
    """
    Glorot-uniform weights drawn from a stream per tensor; biases start at zero.
    """
    params = model.params.zeros_like()
    for entry in params.layout:
        if entry.name.endswith(".b"):
            continue
        params.tensor(entry.name)[...] = glorot_uniform(
            rng.child("init", entry.name), entry.shape
        )
    return params


def forward(model: Model, sample: Any) -> np.ndarray:
    logits, _ = model.forward_batch([sample])
    return logits[0]


def loss_and_gradient(model: Model, batch: Sequence[Any]) -> Tuple[float, ParamVector]:
    """
    Mean cross-entropy over ``batch`` and its exact gradient.
    """
    if not len(batch):
        raise ValueError("Can't compute a gradient over an empty batch")
    labels = np.array([_label(sample) for sample in batch], dtype=np.int64)
    logits, cache = model.forward_batch(batch)
    losses, dlogits = batch_softmax_cross_entropy(logits, labels)
    grad = model.backward_batch(cache, dlogits / len(batch))
    return float(losses.mean()), grad


def sgd_apply(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    params.check_layout(grad)
    return ParamVector(params.layout, params.values - lr * grad.values)


def logits(model: Model, samples: Sequence[Any]) -> np.ndarray:
    """
    Logits of many samples, computed in chunks.
    """
    if not len(samples):
        return np.zeros((0, model.classes))
    chunks = []
    for start in range(0, len(samples), EVAL_CHUNK):
        chunk, _ = model.forward_batch(
            [samples[i] for i in range(start, min(start + EVAL_CHUNK, len(samples)))]
        )
        chunks.append(chunk)
    return np.concatenate(chunks)


def evaluate(model: Model, samples: Sequence[Any]) -> Tuple[float, np.ndarray]:
    """
    :returns: ``(mean loss, predicted classes)``
    """
    if not len(samples):
        raise ValueError("Can't evaluate on an empty set")
    all_logits = logits(model, samples)
    labels = np.array([_label(sample) for sample in samples], dtype=np.int64)
    losses, _ = batch_softmax_cross_entropy(all_logits, labels)
    return float(losses.mean()), all_logits.argmax(axis=1)


def predict(model: Model, samples: Sequence[Any]) -> np.ndarray:
    return logits(model, samples).argmax(axis=1)


def ensemble_by_user(model: Model, sessions: Sequence[Any]) -> Dict[int, int]:
    """
    Predict one class per user from the mean class probabilities over all of
    that user's sessions.
    """
    probabilities = softmax(logits(model, sessions))
    users = np.array([session.user for session in sessions], dtype=np.int64)
    return {
        int(user): int(probabilities[users == user].mean(axis=0).argmax())
        for user in np.unique(users)
    }
