"""
Fusion heads turning the per-view encodings into class logits.

All heads take a list with one ``batch x hidden_dim`` array per view (or one
vector per view for a single sample) and append a constant ``1`` bias channel
where noted.

* ``fc``: ``q = relu(W1 [h; 1])``, ``y = W2 q`` on the concatenated views.
* ``fm``: per class ``a``, ``q_a = U_a h``, ``b_a = w_a . [h; 1]`` and
  ``y_a = sum(q_a * q_a) + b_a``. Squared self-interactions are kept and
  pairwise terms are not halved.
* ``mvm``: per class ``a``, ``q_a(p) = U_a(p) [h(p); 1]`` for each view ``p``
  and ``y_a = sum(q_a(1) * ... * q_a(m))``.
"""
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Type

import numpy as np

from fedmood.base import ShapeError
from fedmood.numeric import relu


def _with_bias(h: np.ndarray) -> np.ndarray:
    return np.concatenate([h, np.ones((h.shape[0], 1))], axis=1)


class FusionHead:
    kind: str = ""

    def __init__(
        self,
        views: int,
        hidden_dim: int,
        classes: int,
        size: int,
        tensors: Optional[Mapping[str, np.ndarray]] = None,
    ):
        self.views = views
        self.hidden_dim = hidden_dim
        self.classes = classes
        self.size = size
        self.tensors: Dict[str, np.ndarray] = {}
        for name, shape in self.shapes().items():
            if tensors is None:
                value = np.zeros(shape)
            else:
                value = np.asarray(tensors[name], dtype=np.float64)
            if value.shape != shape:
                raise ShapeError(f"{self.kind}.{name}", shape, value.shape)
            self.tensors[name] = value

    def __repr__(self):
        return (
            f"{self.__class__.__name__}(views={self.views!r}, "
            f"hidden_dim={self.hidden_dim!r}, classes={self.classes!r}, "
            f"size={self.size!r})"
        )

    @property
    def input_dim(self) -> int:
        return self.views * self.hidden_dim

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        raise NotImplementedError

    def _stack(self, h_views: Sequence[np.ndarray]) -> List[np.ndarray]:
        if len(h_views) != self.views:
            raise ShapeError(self.kind, f"{self.views} views", f"{len(h_views)} views")
        stacked = [np.atleast_2d(np.asarray(h, dtype=np.float64)) for h in h_views]
        for h in stacked:
            if h.shape[1] != self.hidden_dim or h.shape[0] != stacked[0].shape[0]:
                raise ShapeError(self.kind, ("B", self.hidden_dim), h.shape)
        return stacked

    def forward(self, h_views: Sequence[np.ndarray]) -> Tuple[np.ndarray, tuple]:
        """
        :returns: ``(logits, cache)`` with ``batch x classes`` logits.
        """
        raise NotImplementedError

    def backward(
        self, cache: tuple, dlogits: np.ndarray, grads: Dict[str, np.ndarray]
    ) -> List[np.ndarray]:
        """
        Accumulate the head's gradients into ``grads`` and return the gradient
        with respect to each view's encoding.
        """
        raise NotImplementedError

    def logits(self, h_views: Sequence[np.ndarray]) -> np.ndarray:
        """
        Logits of a single sample (one vector per view).
        """
        logits, _ = self.forward(h_views)
        return logits[0]

    def _split(self, dh: np.ndarray) -> List[np.ndarray]:
        return np.split(dh, self.views, axis=1)


class FullyConnectedHead(FusionHead):
    kind = "fc"

    def shapes(self):
        return {
            "W1": (self.size, self.input_dim + 1),
            "W2": (self.classes, self.size),
        }

    def forward(self, h_views):
        h_bar = _with_bias(np.concatenate(self._stack(h_views), axis=1))
        pre = h_bar @ self.tensors["W1"].T
        q = relu(pre)
        return q @ self.tensors["W2"].T, (h_bar, pre, q)

    def backward(self, cache, dlogits, grads):
        h_bar, pre, q = cache
        grads["W2"] += dlogits.T @ q
        d_pre = (dlogits @ self.tensors["W2"]) * (pre > 0)
        grads["W1"] += d_pre.T @ h_bar
        dh_bar = d_pre @ self.tensors["W1"]
        return self._split(dh_bar[:, :-1])


class FactorizationMachineHead(FusionHead):
    kind = "fm"

    def shapes(self):
        return {
            "U": (self.classes, self.size, self.input_dim),
            "w": (self.classes, self.input_dim + 1),
        }

    def forward(self, h_views):
        h = np.concatenate(self._stack(h_views), axis=1)
        h_bar = _with_bias(h)
        q = np.einsum("ckd,bd->bck", self.tensors["U"], h)
        bias = h_bar @ self.tensors["w"].T
        return (q * q).sum(axis=2) + bias, (h, h_bar, q)

    def backward(self, cache, dlogits, grads):
        h, h_bar, q = cache
        dq = 2.0 * q * dlogits[:, :, None]
        grads["U"] += np.einsum("bck,bd->ckd", dq, h)
        grads["w"] += dlogits.T @ h_bar
        dh = np.einsum("bck,ckd->bd", dq, self.tensors["U"])
        dh += dlogits @ self.tensors["w"][:, :-1]
        return self._split(dh)


class MultiViewMachineHead(FusionHead):
    kind = "mvm"

    def shapes(self):
        return {"U": (self.classes, self.views, self.size, self.hidden_dim + 1)}

    def forward(self, h_views):
        h_bars = [_with_bias(h) for h in self._stack(h_views)]
        factors = [
            np.einsum("ckj,bj->bck", self.tensors["U"][:, p], h_bar)
            for p, h_bar in enumerate(h_bars)
        ]
        product = factors[0]
        for factor in factors[1:]:
            product = product * factor
        return product.sum(axis=2), (h_bars, factors)

    def backward(self, cache, dlogits, grads):
        h_bars, factors = cache
        dh_views = []
        for p, h_bar in enumerate(h_bars):
            # Product over the other views, without dividing by this one.
            others = np.ones_like(factors[p])
            for other, factor in enumerate(factors):
                if other != p:
                    others = others * factor
            d_factor = dlogits[:, :, None] * others
            grads["U"][:, p] += np.einsum("bck,bj->ckj", d_factor, h_bar)
            dh_bar = np.einsum("bck,ckj->bj", d_factor, self.tensors["U"][:, p])
            dh_views.append(dh_bar[:, :-1])
        return dh_views


HEADS: Dict[str, Type[FusionHead]] = {
    head.kind: head
    for head in (FullyConnectedHead, FactorizationMachineHead, MultiViewMachineHead)
}


def fuse_fc(head: FullyConnectedHead, h_views: Sequence[np.ndarray]) -> np.ndarray:
    return head.logits(h_views)


def fuse_fm(
    head: FactorizationMachineHead, h_views: Sequence[np.ndarray]
) -> np.ndarray:
    return head.logits(h_views)


def fuse_mvm(head: MultiViewMachineHead, h_views: Sequence[np.ndarray]) -> np.ndarray:
    return head.logits(h_views)
