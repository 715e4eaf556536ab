"""
Synthetic datasets, typing-session construction and federated partitioning.

Datasets are saved as columnar text: one comma separated file per view plus a
``labels.csv`` file and a ``dataset.json`` file holding the generator
parameters.

Classification datasets::

    features.csv  sample,f0,f1,...
    labels.csv    sample,label

Session datasets::

    alphanumeric.csv   session,step,duration,since_last,dx,dy
    special.csv        session,step,auto-correct,backspace,space,suggestion,
                       switching-keyboard,other
    accelerometer.csv  session,step,ax,ay,az
    labels.csv         session,user,label,duration
"""
import json
import logging
import math
import os
from typing import (
    Any,
    Dict,
    Iterator,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from typing_extensions import Literal

from fedmood.base import SPECIAL_KEYS, VIEW_FEATURES, VIEW_NAMES, ShapeError
from fedmood.conf import settings
from fedmood.numeric import Rng

logger = logging.getLogger(__name__)

PartitionMode = Literal["iid", "non-iid"]

# Three rows of ten keys.
KEYBOARD_ROWS, KEYBOARD_COLS = 3, 10

VIEW_COLUMNS = {
    "alphanumeric": ("duration", "since_last", "dx", "dy"),
    "special": SPECIAL_KEYS,
    "accelerometer": ("ax", "ay", "az"),
}

BASE_SPECIAL_RATIOS = np.array([0.10, 0.25, 0.35, 0.10, 0.05, 0.15])
SPECIAL_RATIO_SHIFT = np.array([0.15, 0.35, -0.20, 0.0, 0.05, -0.05])


class KeypressLog(NamedTuple):
    timestamps: np.ndarray
    features: np.ndarray


class LabeledVector(NamedTuple):
    features: np.ndarray
    label: int


class MultiViewSession(NamedTuple):
    alphanumeric: np.ndarray
    special: np.ndarray
    accelerometer: np.ndarray
    label: int
    user: int = 0
    duration: float = 0.0

    @property
    def views(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.alphanumeric, self.special, self.accelerometer)


class SignalSpec(NamedTuple):
    """
    How strongly the class is planted in generated sessions.

    ``strength`` scales every class difference (typing speed, special key
    ratios and accelerometer correlation); ``0`` gives class-independent data.
    """

    classes: int = 2
    strength: float = 1.0
    min_keys: int = 8
    max_keys: int = 30
    mean_interval: float = 0.35
    mean_press: float = 0.09


class LabeledVectorDataset:
    kind = "classification"

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        classes: int,
        seed: Optional[int] = None,
        params: Optional[Dict[str, Any]] = None,
    ):
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise ShapeError("LabeledVectorDataset", ("n", "dim"), features.shape)
        if labels.size and (labels.min() < 0 or labels.max() >= classes):
            raise ValueError(f"Labels must be in [0, {classes})")
        self.features = features
        self.labels = labels.astype(np.int64)
        self.classes = classes
        self.seed = seed
        self.params = params or {}

    def __len__(self):
        return self.features.shape[0]

    def __getitem__(self, index: int) -> LabeledVector:
        return LabeledVector(self.features[index], int(self.labels[index]))

    def __iter__(self) -> Iterator[LabeledVector]:
        for index in range(len(self)):
            yield self[index]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "LabeledVectorDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledVectorDataset(
            self.features[indices], self.labels[indices], self.classes, self.seed
        )


class SessionDataset:
    kind = "sessions"

    def __init__(
        self,
        sessions: Sequence[MultiViewSession],
        classes: int,
        seed: Optional[int] = None,
        params: Optional[Dict[str, Any]] = None,
    ):
        self.sessions = list(sessions)
        self.classes = classes
        self.seed = seed
        self.params = params or {}

    def __len__(self):
        return len(self.sessions)

    def __getitem__(self, index: int) -> MultiViewSession:
        return self.sessions[index]

    def __iter__(self) -> Iterator[MultiViewSession]:
        return iter(self.sessions)

    @property
    def labels(self) -> np.ndarray:
        return np.array([session.label for session in self.sessions], dtype=np.int64)

    @property
    def users(self) -> np.ndarray:
        return np.array([session.user for session in self.sessions], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "SessionDataset":
        return SessionDataset(
            [self.sessions[int(index)] for index in indices], self.classes, self.seed
        )


Dataset = Union[LabeledVectorDataset, SessionDataset]


class Partition(NamedTuple):
    clients: Dict[int, List[int]]
    mode: str

    def sizes(self) -> Dict[int, int]:
        return {client: len(indices) for client, indices in self.clients.items()}


def segment_sessions(
    log: Union[KeypressLog, Sequence[float], np.ndarray], gap: Optional[float] = None
) -> List[range]:
    """
    Split a keypress log into sessions.

    A session starts with a keypress that follows the previous one by ``gap``
    seconds or more (inclusive) and every keypress belongs to exactly one
    session. Returns the index range of each session.
    """
    if gap is None:
        gap = settings.FEDMOOD_SESSION_GAP
    timestamps = np.asarray(
        log.timestamps if isinstance(log, KeypressLog) else log, dtype=np.float64
    )
    if timestamps.size == 0:
        return []
    deltas = np.diff(timestamps)
    if np.any(deltas <= 0):
        raise ValueError("Keypress timestamps must be strictly increasing")
    starts = [0] + [int(i) + 1 for i in np.flatnonzero(deltas >= gap)]
    stops = starts[1:] + [timestamps.size]
    return [range(start, stop) for start, stop in zip(starts, stops)]


def gen_classification(
    seed: int, n: int, classes: int, dim: int, separation: float
) -> LabeledVectorDataset:
    """
    Gaussian blobs with unit variance around class means that lie
    ``separation`` apart from the origin.

    Labels are balanced (as far as ``n`` allows) and shuffled.
    """
    if classes < 2 or dim < 1 or n < classes:
        raise ValueError(
            f"Need classes >= 2, dim >= 1 and n >= classes (got n={n}, "
            f"classes={classes}, dim={dim})"
        )
    if separation < 0 or not math.isfinite(separation):
        raise ValueError(f"separation must be finite and non-negative: {separation}")
    rng = Rng(seed)
    if classes <= dim:
        directions = np.eye(classes, dim)
    else:
        directions = rng.child("means").generator.normal(size=(classes, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions
    labels = np.arange(n) % classes
    labels = rng.child("labels").generator.permutation(labels)
    noise = rng.child("noise").generator.normal(size=(n, dim))
    features = means[labels] + noise
    params = {"n": n, "classes": classes, "dim": dim, "separation": separation}
    logger.debug("Generated classification dataset %r (seed=%s)", params, seed)
    return LabeledVectorDataset(features, labels, classes, seed, params)


def _class_level(label: int, classes: int) -> float:
    return label / (classes - 1) if classes > 1 else 0.0


def _user_timeline(
    rng: Rng, labels: Sequence[int], signal: SignalSpec
) -> Tuple[KeypressLog, List[int]]:
    """
    Generate one user's alphanumeric keypresses across all their sessions.

    Returns the keypress log (timestamps and ``press, row, col`` features)
    and the label of each session in order.
    """
    gap = settings.FEDMOOD_SESSION_GAP
    max_interval = min(
        0.9 * gap, 0.9 * settings.FEDMOOD_MAX_SESSION_SECONDS / signal.max_keys
    )
    generator = rng.generator
    timestamps: List[float] = []
    features: List[Tuple[float, int, int]] = []
    now = 0.0
    for label in labels:
        level = _class_level(label, signal.classes) * signal.strength
        mean_interval = signal.mean_interval * (1.0 + 0.8 * level)
        mean_press = signal.mean_press * (1.0 + 0.5 * level)
        keys = int(generator.integers(signal.min_keys, signal.max_keys + 1))
        intervals = generator.gamma(4.0, mean_interval / 4.0, size=keys)
        intervals = np.clip(intervals, 0.02, max_interval)
        intervals[0] = 0.0
        presses = np.clip(generator.gamma(6.0, mean_press / 6.0, size=keys), 0.01, 0.5)
        rows = generator.integers(0, KEYBOARD_ROWS, size=keys)
        cols = generator.integers(0, KEYBOARD_COLS, size=keys)
        for interval, press, row, col in zip(intervals, presses, rows, cols):
            now += float(interval)
            timestamps.append(now)
            features.append((float(press), int(row), int(col)))
        now += gap + float(generator.exponential(30.0))
    return KeypressLog(np.array(timestamps), np.array(features)), list(labels)


def _alphanumeric_view(log: KeypressLog, keys: range) -> np.ndarray:
    stamps = log.timestamps[keys.start : keys.stop]
    press = log.features[keys.start : keys.stop, 0]
    rows = log.features[keys.start : keys.stop, 1]
    cols = log.features[keys.start : keys.stop, 2]
    since_last = np.concatenate([[0.0], np.diff(stamps)])
    dx = np.concatenate([[0.0], np.diff(cols)])
    dy = np.concatenate([[0.0], np.diff(rows)])
    return np.column_stack([press, since_last, dx, dy])


def _special_view(rng: Rng, level: float, keys: int) -> np.ndarray:
    ratios = np.clip(BASE_SPECIAL_RATIOS + level * SPECIAL_RATIO_SHIFT, 0.01, None)
    ratios /= ratios.sum()
    generator = rng.generator
    count = max(1, int(generator.binomial(keys, 0.3)))
    events = generator.choice(len(SPECIAL_KEYS), size=count, p=ratios)
    return np.eye(len(SPECIAL_KEYS))[events]


def _accelerometer_view(rng: Rng, level: float, duration: float) -> np.ndarray:
    samples = math.ceil(duration / settings.FEDMOOD_ACCELEROMETER_CADENCE)
    correlation = float(np.clip(0.8 * (2.0 * level - 1.0), -0.9, 0.9))
    generator = rng.generator
    ax = generator.normal(size=samples)
    ay = correlation * ax + math.sqrt(1.0 - correlation**2) * generator.normal(
        size=samples
    )
    az = 9.81 + generator.normal(size=samples)
    return np.column_stack([ax, ay, az])


def _standardize(sessions: List[MultiViewSession]) -> List[MultiViewSession]:
    standardized: Dict[str, List[np.ndarray]] = {}
    for view in ("alphanumeric", "accelerometer"):
        rows = np.concatenate([getattr(session, view) for session in sessions])
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std[std == 0] = 1.0
        standardized[view] = [
            (getattr(session, view) - mean) / std for session in sessions
        ]
    return [
        session._replace(
            alphanumeric=standardized["alphanumeric"][i],
            accelerometer=standardized["accelerometer"][i],
        )
        for i, session in enumerate(sessions)
    ]


def gen_multiview_sessions(
    seed: int,
    users: int,
    sessions_per_user: int,
    signal: SignalSpec = SignalSpec(),
) -> SessionDataset:
    """
    Generate typing sessions with three views per session.

    Each user gets a continuous keypress timeline in which sessions are
    separated by at least the session gap; the timeline is cut back into
    sessions with :func:`segment_sessions`. Alphanumeric and accelerometer
    features are standardized over the whole dataset, special keys stay
    one-hot.
    """
    if users < 1 or sessions_per_user < 1:
        raise ValueError("Need at least one user and one session per user")
    if signal.classes < 2 or signal.strength < 0:
        raise ValueError(f"Degenerate signal spec {signal!r}")
    if not 1 <= signal.min_keys <= signal.max_keys:
        raise ValueError(f"Degenerate keypress counts in {signal!r}")
    root = Rng(seed)
    sessions: List[MultiViewSession] = []
    for user in range(users):
        user_rng = root.child("user", user)
        labels = user_rng.child("labels").generator.permutation(
            np.arange(sessions_per_user) % signal.classes
        )
        log, labels = _user_timeline(user_rng.child("timeline"), labels, signal)
        ranges = segment_sessions(log)
        for index, (keys, label) in enumerate(zip(ranges, labels)):
            level = _class_level(int(label), signal.classes) * signal.strength
            alphanumeric = _alphanumeric_view(log, keys)
            duration = float(
                log.timestamps[keys.stop - 1]
                - log.timestamps[keys.start]
                + log.features[keys.stop - 1, 0]
            )
            session_rng = user_rng.child("session", index)
            sessions.append(
                MultiViewSession(
                    alphanumeric=alphanumeric,
                    special=_special_view(
                        session_rng.child("special"), level, len(keys)
                    ),
                    accelerometer=_accelerometer_view(
                        session_rng.child("accelerometer"), level, duration
                    ),
                    label=int(label),
                    user=user,
                    duration=duration,
                )
            )
    params = {
        "users": users,
        "sessions_per_user": sessions_per_user,
        "signal": signal._asdict(),
    }
    logger.debug("Generated %d sessions (seed=%s)", len(sessions), seed)
    return SessionDataset(_standardize(sessions), signal.classes, seed, params)


def train_test_split(
    n: int, test_fraction: float, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    if not 0 <= test_fraction < 1:
        raise ValueError(f"test_fraction must be in [0, 1): {test_fraction}")
    order = Rng(seed).child("split").generator.permutation(n)
    test_size = int(round(n * test_fraction))
    return np.sort(order[test_size:]), np.sort(order[:test_size])


def partition(
    dataset: Union[Dataset, np.ndarray, Sequence[int]],
    clients: int,
    mode: PartitionMode = "iid",
    seed: int = 0,
    shards_per_client: int = 2,
) -> Partition:
    """
    Split sample indices between ``clients`` clients.

    ``iid`` shuffles and deals equal contiguous chunks. ``non-iid`` sorts by
    label and deals ``shards_per_client`` contiguous label shards to each
    client (a single shard each if there are too few samples).
    """
    labels = np.asarray(
        dataset.labels if hasattr(dataset, "labels") else dataset, dtype=np.int64
    )
    n = labels.shape[0]
    if clients < 1 or clients > n:
        raise ValueError(f"Can't split {n} samples between {clients} clients")
    rng = Rng(seed).child("partition", mode)
    if mode == "iid":
        chunks = np.array_split(rng.generator.permutation(n), clients)
        assigned = {
            client: np.sort(chunk).tolist() for client, chunk in enumerate(chunks)
        }
    elif mode == "non-iid":
        if shards_per_client < 1:
            raise ValueError("shards_per_client must be at least 1")
        if n < clients * shards_per_client:
            shards_per_client = 1
        by_label = np.argsort(labels, kind="stable")
        shards = np.array_split(by_label, clients * shards_per_client)
        order = rng.generator.permutation(len(shards))
        assigned = {}
        for client in range(clients):
            mine = order[client * shards_per_client : (client + 1) * shards_per_client]
            assigned[client] = np.concatenate([shards[i] for i in mine]).tolist()
    else:
        raise ValueError(f"Unknown partition mode {mode!r}")
    return Partition(assigned, mode)


def _write_columns(path: str, header: Sequence[str], rows: np.ndarray) -> None:
    np.savetxt(
        path,
        rows.reshape(-1, len(header)),
        fmt="%.17g",
        delimiter=",",
        header=",".join(header),
        comments="",
    )


def _read_columns(path: str, columns: int) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return rows.reshape(-1, columns)


def save_dataset(dataset: Dataset, directory: Union[str, os.PathLike]) -> None:
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    meta = {
        "kind": dataset.kind,
        "classes": dataset.classes,
        "seed": dataset.seed,
        "params": dataset.params,
    }
    with open(os.path.join(directory, "dataset.json"), "w") as meta_file:
        json.dump(meta, meta_file, indent=2, sort_keys=True)
    if isinstance(dataset, LabeledVectorDataset):
        index = np.arange(len(dataset))
        _write_columns(
            os.path.join(directory, "features.csv"),
            ["sample"] + [f"f{i}" for i in range(dataset.dim)],
            np.column_stack([index, dataset.features]),
        )
        _write_columns(
            os.path.join(directory, "labels.csv"),
            ["sample", "label"],
            np.column_stack([index, dataset.labels]),
        )
        return
    for view in VIEW_NAMES:
        rows = [
            np.column_stack(
                [
                    np.full(len(getattr(session, view)), number),
                    np.arange(len(getattr(session, view))),
                    getattr(session, view),
                ]
            )
            for number, session in enumerate(dataset)
        ]
        _write_columns(
            os.path.join(directory, f"{view}.csv"),
            ["session", "step"] + list(VIEW_COLUMNS[view]),
            np.concatenate(rows),
        )
    _write_columns(
        os.path.join(directory, "labels.csv"),
        ["session", "user", "label", "duration"],
        np.array(
            [
                [number, session.user, session.label, session.duration]
                for number, session in enumerate(dataset)
            ]
        ),
    )


def load_dataset(directory: Union[str, os.PathLike]) -> Dataset:
    directory = os.fspath(directory)
    with open(os.path.join(directory, "dataset.json")) as meta_file:
        meta = json.load(meta_file)
    if meta["kind"] == LabeledVectorDataset.kind:
        dim = meta["params"]["dim"]
        features = _read_columns(os.path.join(directory, "features.csv"), dim + 1)
        labels = _read_columns(os.path.join(directory, "labels.csv"), 2)
        return LabeledVectorDataset(
            features[:, 1:],
            labels[:, 1].astype(np.int64),
            meta["classes"],
            meta["seed"],
            meta["params"],
        )
    if meta["kind"] != SessionDataset.kind:
        raise ValueError(f"Unknown dataset kind {meta['kind']!r}")
    labels = _read_columns(os.path.join(directory, "labels.csv"), 4)
    views = {}
    for view in VIEW_NAMES:
        rows = _read_columns(
            os.path.join(directory, f"{view}.csv"), VIEW_FEATURES[view] + 2
        )
        session_ids = rows[:, 0].astype(np.int64)
        boundaries = np.searchsorted(session_ids, np.arange(len(labels) + 1))
        views[view] = [
            rows[start:stop, 2:] for start, stop in zip(boundaries, boundaries[1:])
        ]
    sessions = [
        MultiViewSession(
            alphanumeric=views["alphanumeric"][i],
            special=views["special"][i],
            accelerometer=views["accelerometer"][i],
            label=int(row[2]),
            user=int(row[1]),
            duration=float(row[3]),
        )
        for i, row in enumerate(labels)
    ]
    return SessionDataset(sessions, meta["classes"], meta["seed"], meta["params"])
