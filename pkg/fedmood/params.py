"""
Flat parameter vectors and their on-disk checkpoint format.

A checkpoint file is a single UTF-8 JSON header line::

    {"format": "fedmood-params", "version": 1, "dtype": "<f8",
     "count": N, "layout": [["name", [rows, cols]], ...]}

followed by a newline and exactly ``N`` little-endian float64 values (8 * N
bytes), in layout order, each tensor flattened row-major.
"""
import json
import os
from typing import Dict, Iterable, Iterator, Mapping, NamedTuple, Sequence, Tuple, Union

import numpy as np

from fedmood.base import LayoutError, ShapeError
from fedmood.numeric import l2_norm

CHECKPOINT_FORMAT = "fedmood-params"
CHECKPOINT_VERSION = 1


class TensorSpec(NamedTuple):
    name: str
    shape: Tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


class Layout:
    """
    An ordered description of the named tensors packed in a :class:`ParamVector`.
    """

    def __init__(self, entries: Iterable[Tuple[str, Sequence[int]]]):
        self.entries = tuple(
            TensorSpec(name, tuple(int(dim) for dim in shape))
            for name, shape in entries
        )
        self.slices: Dict[str, slice] = {}
        offset = 0
        for entry in self.entries:
            if entry.name in self.slices:
                raise ValueError(f"Duplicate tensor name {entry.name!r} in layout")
            if not entry.shape or min(entry.shape) < 1:
                raise ShapeError(entry.name, "positive dimensions", entry.shape)
            self.slices[entry.name] = slice(offset, offset + entry.size)
            offset += entry.size
        self.size = offset

    def __iter__(self) -> Iterator[TensorSpec]:
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def __repr__(self):
        return f"{self.__class__.__name__}({[tuple(e) for e in self.entries]!r})"

    def shape(self, name: str) -> Tuple[int, ...]:
        for entry in self.entries:
            if entry.name == name:
                return entry.shape
        raise KeyError(name)

    def to_json(self) -> list:
        return [[entry.name, list(entry.shape)] for entry in self.entries]

    @classmethod
    def from_json(cls, data: list) -> "Layout":
        return cls((name, shape) for name, shape in data)


class ParamVector:
    """
    All trainable weights of a model as one flat float64 array plus the layout
    that maps segments of it to named tensors.

    :meth:`tensor` returns views, so writing to a tensor writes to the vector.
    """

    def __init__(self, layout: Layout, values: Union[np.ndarray, None] = None):
        self.layout = layout
        if values is None:
            values = np.zeros(layout.size)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (layout.size,):
            raise ShapeError("ParamVector", (layout.size,), values.shape)
        self.values = values

    @classmethod
    def from_tensors(
        cls, layout: Layout, tensors: Mapping[str, np.ndarray]
    ) -> "ParamVector":
        params = cls(layout)
        for entry in layout:
            tensor = np.asarray(tensors[entry.name], dtype=np.float64)
            if tensor.shape != entry.shape:
                raise ShapeError(entry.name, entry.shape, tensor.shape)
            params.values[layout.slices[entry.name]] = tensor.ravel()
        return params

    def __len__(self):
        return self.layout.size

    def __repr__(self):
        return f"{self.__class__.__name__}(size={self.layout.size})"

    def tensor(self, name: str) -> np.ndarray:
        return self.values[self.layout.slices[name]].reshape(self.layout.shape(name))

    def unflatten(self) -> Dict[str, np.ndarray]:
        return {entry.name: self.tensor(entry.name) for entry in self.layout}

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.values.copy())

    def zeros_like(self) -> "ParamVector":
        return ParamVector(self.layout)

    def check_layout(self, other: "ParamVector") -> None:
        if self.layout != other.layout:
            raise LayoutError(f"Layout mismatch: {self.layout!r} != {other.layout!r}")

    def norm(self) -> float:
        return l2_norm(self.values)

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return ParamVector(self.layout, self.values + other.values)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return ParamVector(self.layout, self.values - other.values)

    def __mul__(self, scale: float) -> "ParamVector":
        return ParamVector(self.layout, self.values * scale)

    __rmul__ = __mul__


def save_checkpoint(path: Union[str, os.PathLike], params: ParamVector) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "count": params.layout.size,
        "layout": params.layout.to_json(),
    }
    with open(path, "wb") as checkpoint:
        checkpoint.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        checkpoint.write(b"\n")
        checkpoint.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path: Union[str, os.PathLike]) -> ParamVector:
    with open(path, "rb") as checkpoint:
        header = json.loads(checkpoint.readline().decode("utf-8"))
        payload = checkpoint.read()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"Unsupported checkpoint version {header.get('version')!r}")
    layout = Layout.from_json(header["layout"])
    values = np.frombuffer(payload, dtype="<f8")
    if values.shape != (header["count"],) or header["count"] != layout.size:
        raise ShapeError("load_checkpoint", (layout.size,), values.shape)
    return ParamVector(layout, values.astype(np.float64))
