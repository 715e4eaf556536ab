"""
Federated training protocols.

A round takes the current :class:`ServerState` and the registered clients and
returns the next server state, whose ``last_trace`` is a :class:`RoundTrace`
describing what was transferred. Transfer counts accumulate on the server
state itself.

Client work within a round is independent and may run on a thread pool
(``FEDMOOD_CLIENT_WORKERS``); results are always consumed in ascending client
id order so a simulation is reproducible from its seed and config alone.
Local batches come from the client's ``("batch", round, step)`` stream, so two
protocols that train the same client at the same round and step see the same
samples.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import (
    Callable,
    Dict,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    TypeVar,
)

import numpy as np
from typing_extensions import Literal

from fedmood.base import ProtocolError
from fedmood.conf import settings
from fedmood.networks import Model, loss_and_gradient, sgd_apply
from fedmood.numeric import Rng, accumulate, gaussian_sample, l2_norm
from fedmood.params import ParamVector

logger = logging.getLogger(__name__)

NO_CLIPPING = math.inf

SelectionStrategy = Literal["largest-magnitude", "random"]
T = TypeVar("T")


class ClientState:
    """
    One participant: its local data shard, local parameters and random stream.
    """

    def __init__(self, client_id: int, data, params: ParamVector, rng: Rng):
        if len(data) < 1:
            raise ValueError(f"Client {client_id} has no local samples")
        self.client_id = client_id
        self.data = data
        self.params = params
        self.rng = rng

    def __repr__(self):
        return f"{self.__class__.__name__}(client_id={self.client_id!r}, n={self.n})"

    @property
    def n(self) -> int:
        return len(self.data)


class RoundTrace(NamedTuple):
    round: int
    protocol: str
    participants: Tuple[int, ...]
    loss: float
    scalars_up: int
    scalars_down: int
    uploads: Dict[int, int]
    downloads: Dict[int, int]
    #: Norm of each participant's update before clipping (DP rounds only).
    clip_norms: Dict[int, float] = {}


class ServerState(NamedTuple):
    model: Model
    params: ParamVector
    round: int
    total: int
    rng: Rng
    last_trace: Optional[RoundTrace] = None
    #: Scalars transferred since round 0.
    scalars_up: int = 0
    scalars_down: int = 0

    @classmethod
    def start(
        cls,
        model: Model,
        params: ParamVector,
        clients: Sequence[ClientState],
        seed: int,
    ) -> "ServerState":
        _check_clients(params, clients)
        return cls(model, params, 0, sum(client.n for client in clients), Rng(seed))

    def advance(self, params: ParamVector, trace: RoundTrace) -> "ServerState":
        return self._replace(
            params=params,
            round=self.round + 1,
            last_trace=trace,
            scalars_up=self.scalars_up + trace.scalars_up,
            scalars_down=self.scalars_down + trace.scalars_down,
        )


class SelectiveSgdConfig(NamedTuple):
    upload_fraction: float = 0.1
    download_fraction: float = 1.0
    strategy: SelectionStrategy = "largest-magnitude"
    lr: float = 0.1
    #: ``None`` trains on the whole local shard.
    batch_size: Optional[int] = None

    def check(self):
        for name in ("upload_fraction", "download_fraction"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if self.strategy not in ("largest-magnitude", "random"):
            raise ValueError(f"Unknown selection strategy {self.strategy!r}")
        _check_batch_size(self.batch_size)


class FedAvgConfig(NamedTuple):
    local_steps: int = 1
    lr: float = 0.1
    batch_size: Optional[int] = None
    #: Fraction of the clients taking part in each round.
    client_fraction: float = 1.0

    def check(self):
        if self.local_steps < 1:
            raise ValueError(f"local_steps must be at least 1, got {self.local_steps}")
        if not 0 < self.client_fraction <= 1:
            raise ValueError(
                f"client_fraction must be in (0, 1], got {self.client_fraction}"
            )
        _check_batch_size(self.batch_size)


class DpConfig(NamedTuple):
    sampling_probability: float = 1.0
    clip_bound: float = NO_CLIPPING
    noise_multiplier: float = 0.0

    def check(self):
        if not 0 < self.sampling_probability <= 1:
            raise ValueError(
                "sampling_probability must be in (0, 1], "
                f"got {self.sampling_probability}"
            )
        if not self.clip_bound > 0:
            raise ValueError(f"clip_bound must be positive, got {self.clip_bound}")
        if self.noise_multiplier < 0:
            raise ValueError(
                f"noise_multiplier must be non-negative, got {self.noise_multiplier}"
            )
        if self.noise_multiplier > 0 and math.isinf(self.clip_bound):
            raise ValueError("Adding noise needs a finite clip_bound")


def _check_batch_size(batch_size: Optional[int]) -> None:
    if batch_size is not None and batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")


def _check_clients(params: ParamVector, clients: Sequence[ClientState]) -> None:
    if not clients:
        raise ProtocolError("A round needs at least one client")
    for client in clients:
        params.check_layout(client.params)


def build_clients(
    dataset, partition, params: ParamVector, seed: int
) -> List[ClientState]:
    """
    Create one :class:`ClientState` per partition entry, each starting from a
    copy of ``params``.
    """
    root = Rng(seed)
    return [
        ClientState(
            client_id,
            dataset.subset(indices),
            params.copy(),
            root.child("client", client_id),
        )
        for client_id, indices in sorted(partition.clients.items())
    ]


def _map_clients(
    work: Callable[[ClientState], T], clients: Sequence[ClientState]
) -> List[T]:
    workers = settings.FEDMOOD_CLIENT_WORKERS
    if workers <= 1 or len(clients) == 1:
        return [work(client) for client in clients]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, clients))


def _batch(client: ClientState, round: int, step: int, batch_size: Optional[int]):
    if batch_size is None or batch_size >= client.n:
        return client.data
    rng = client.rng.child("batch", round, step)
    indices = np.sort(rng.generator.choice(client.n, batch_size, replace=False))
    return client.data.subset(indices)


def _local_sgd(
    server: ServerState,
    client: ClientState,
    params: ParamVector,
    steps: int,
    lr: float,
    batch_size: Optional[int],
) -> Tuple[ParamVector, float]:
    losses = []
    for step in range(steps):
        batch = _batch(client, server.round, step, batch_size)
        loss, grad = loss_and_gradient(server.model.with_params(params), batch)
        params = sgd_apply(params, grad, lr)
        losses.append(loss)
    logger.debug(
        "Round %d client %d: %d local steps, mean loss %.6f",
        server.round,
        client.client_id,
        steps,
        np.mean(losses),
    )
    return params, float(np.mean(losses))


def _aggregate(
    params: ParamVector, deltas: Sequence[ParamVector], weights: Sequence[float]
) -> np.ndarray:
    total = np.zeros(params.layout.size)
    for delta, weight in zip(deltas, weights):
        accumulate(total, delta.values, weight)
    return total


def selection_size(fraction: float, dim: int) -> int:
    # Rounded first so that e.g. 0.1 * 30 selects 3 coordinates, not 4.
    return min(dim, max(1, math.ceil(round(fraction * dim, 9))))


def select_coordinates(
    scores: np.ndarray, fraction: float, strategy: SelectionStrategy, rng: Rng
) -> np.ndarray:
    """
    Indices of the ``ceil(fraction * dim)`` coordinates to transfer, sorted.

    ``largest-magnitude`` picks the largest ``|scores|``, ties going to the
    lower index; ``random`` picks uniformly without replacement.
    """
    size = selection_size(fraction, scores.shape[0])
    if strategy == "random":
        chosen = rng.generator.choice(scores.shape[0], size, replace=False)
    else:
        chosen = np.argsort(-np.abs(scores), kind="stable")[:size]
    return np.sort(chosen)


def selective_sgd_round(
    server: ServerState, clients: Sequence[ClientState], cfg: SelectiveSgdConfig
) -> ServerState:
    """
    Distributed selective SGD.

    Every client refreshes a ``download_fraction`` of its local coordinates
    from the global parameters, takes one SGD step on a local batch and
    uploads an ``upload_fraction`` of its gradient coordinates. The server
    subtracts ``lr`` times each sparse gradient, in client id order.
    """
    cfg.check()
    _check_clients(server.params, clients)
    global_values = server.params.values
    dim = global_values.shape[0]

    def train(client: ClientState):
        downloaded = select_coordinates(
            global_values - client.params.values,
            cfg.download_fraction,
            cfg.strategy,
            client.rng.child("download", server.round),
        )
        local = client.params.copy()
        local.values[downloaded] = global_values[downloaded]
        batch = _batch(client, server.round, 0, cfg.batch_size)
        loss, grad = loss_and_gradient(server.model.with_params(local), batch)
        client.params = sgd_apply(local, grad, cfg.lr)
        uploaded = select_coordinates(
            grad.values,
            cfg.upload_fraction,
            cfg.strategy,
            client.rng.child("upload", server.round),
        )
        return downloaded, uploaded, grad.values[uploaded], loss

    results = _map_clients(train, clients)
    values = global_values.copy()
    for downloaded, uploaded, gradient, _ in results:
        values[uploaded] -= cfg.lr * gradient
    trace = RoundTrace(
        round=server.round,
        protocol="selective",
        participants=tuple(client.client_id for client in clients),
        loss=float(np.mean([result[3] for result in results])),
        scalars_up=sum(len(result[1]) for result in results),
        scalars_down=sum(len(result[0]) for result in results),
        uploads={c.client_id: len(r[1]) for c, r in zip(clients, results)},
        downloads={c.client_id: len(r[0]) for c, r in zip(clients, results)},
    )
    logger.info(
        "Selective SGD round %d: %d clients, %d of %d coordinates uploaded",
        server.round,
        len(clients),
        trace.scalars_up,
        dim * len(clients),
    )
    return server.advance(ParamVector(server.params.layout, values), trace)


def _choose_participants(
    server: ServerState, clients: Sequence[ClientState], fraction: float
) -> List[ClientState]:
    if fraction >= 1:
        return list(clients)
    count = max(1, int(round(fraction * len(clients))))
    rng = server.rng.child("clients", server.round)
    chosen = rng.generator.choice(len(clients), count, replace=False)
    return [clients[i] for i in sorted(chosen)]


def _full_transfer_trace(
    server: ServerState, protocol: str, participants: Sequence[ClientState], loss: float
) -> RoundTrace:
    dim = server.params.layout.size
    counts = {client.client_id: dim for client in participants}
    return RoundTrace(
        round=server.round,
        protocol=protocol,
        participants=tuple(counts),
        loss=loss,
        scalars_up=dim * len(participants),
        scalars_down=dim * len(participants),
        uploads=counts,
        downloads=dict(counts),
    )


def fedavg_round(
    server: ServerState, clients: Sequence[ClientState], cfg: FedAvgConfig
) -> ServerState:
    """
    Federated averaging: participants run ``local_steps`` SGD steps from the
    global parameters and the server takes the ``n_k``-weighted average of
    their results, renormalized over the participants.
    """
    cfg.check()
    _check_clients(server.params, clients)
    participants = _choose_participants(server, clients, cfg.client_fraction)
    total = sum(client.n for client in participants)
    if total <= 0:
        raise ProtocolError("Participants hold no samples")

    def train(client: ClientState):
        return _local_sgd(
            server, client, server.params, cfg.local_steps, cfg.lr, cfg.batch_size
        )

    results = _map_clients(train, participants)
    for client, (params, _) in zip(participants, results):
        client.params = params
    deltas = [params - server.params for params, _ in results]
    update = _aggregate(
        server.params, deltas, [client.n / total for client in participants]
    )
    loss = float(np.mean([loss for _, loss in results]))
    logger.info(
        "FedAvg round %d: %d participants, mean local loss %.6f",
        server.round,
        len(participants),
        loss,
    )
    return server.advance(
        ParamVector(server.params.layout, server.params.values + update),
        _full_transfer_trace(server, "fedavg", participants, loss),
    )


def naive_distributed_sgd_round(
    server: ServerState,
    clients: Sequence[ClientState],
    lr: float,
    batch_size: Optional[int] = None,
    protocol: str = "naive",
) -> ServerState:
    """
    One SGD step on the ``n_k / n``-weighted mean of the clients' gradients,
    all computed at the current global parameters.
    """
    _check_batch_size(batch_size)
    _check_clients(server.params, clients)

    def gradient(client: ClientState):
        batch = _batch(client, server.round, 0, batch_size)
        return loss_and_gradient(server.model.with_params(server.params), batch)

    results = _map_clients(gradient, clients)
    total = sum(client.n for client in clients)
    pooled = _aggregate(
        server.params,
        [grad for _, grad in results],
        [client.n / total for client in clients],
    )
    loss = float(np.mean([loss for loss, _ in results]))
    logger.info(
        "Distributed SGD round %d: %d clients, mean loss %.6f",
        server.round,
        len(clients),
        loss,
    )
    return server.advance(
        ParamVector(server.params.layout, server.params.values - lr * pooled),
        _full_transfer_trace(server, protocol, clients, loss),
    )


def clip_update(delta: ParamVector, bound: float) -> ParamVector:
    """
    Scale ``delta`` down to an L2 norm of at most ``bound``.
    """
    if not bound > 0:
        raise ValueError(f"Clip bound must be positive, got {bound}")
    norm = l2_norm(delta.values)
    if math.isinf(bound) or norm <= bound:
        return delta.copy()
    clipped = delta * (bound / norm)
    # Rounding can leave the result a few ulps above the bound.
    while l2_norm(clipped.values) > bound:
        clipped = clipped * np.nextafter(bound / l2_norm(clipped.values), 0.0)
    return clipped


def _sampled(server: ServerState, client: ClientState, p: float) -> bool:
    if p >= 1:
        return True
    rng = server.rng.child("participation", server.round, client.client_id)
    return bool(rng.generator.uniform() < p)


def dp_fedavg_round(
    server: ServerState,
    clients: Sequence[ClientState],
    fed: FedAvgConfig,
    dp: DpConfig,
    ledger,
) -> ServerState:
    """
    Differentially private federated averaging.

    Each client takes part independently with probability ``p``. Participant
    updates are clipped to ``clip_bound``, summed and divided by ``p * K``,
    then Gaussian noise with standard deviation
    ``noise_multiplier * clip_bound / (p * K)`` is added to the average. The
    round is recorded in ``ledger``.
    """
    if ledger is None:
        raise ProtocolError("A differentially private round needs a privacy ledger")
    fed.check()
    dp.check()
    _check_clients(server.params, clients)
    p = dp.sampling_probability
    participants = [client for client in clients if _sampled(server, client, p)]
    if not participants:
        logger.warning("DP round %d: no client was sampled", server.round)

    def train(client: ClientState):
        return _local_sgd(
            server, client, server.params, fed.local_steps, fed.lr, fed.batch_size
        )

    results = _map_clients(train, participants) if participants else []
    clip_norms = {}
    deltas = []
    for client, (params, _) in zip(participants, results):
        client.params = params
        delta = params - server.params
        clip_norms[client.client_id] = delta.norm()
        deltas.append(clip_update(delta, dp.clip_bound))
    scale = 1.0 / (p * len(clients))
    update = _aggregate(server.params, deltas, [scale] * len(deltas))
    if dp.noise_multiplier > 0:
        std = dp.noise_multiplier * dp.clip_bound * scale
        update += gaussian_sample(
            server.rng.child("noise", server.round), 0.0, std, update.shape[0]
        )
    ledger.append(p, dp.noise_multiplier)

    loss = float(np.mean([loss for _, loss in results])) if results else math.nan
    trace = _full_transfer_trace(server, "dp-fedavg", participants, loss)._replace(
        clip_norms=clip_norms
    )
    logger.info(
        "DP-FedAvg round %d: %d of %d clients sampled",
        server.round,
        len(participants),
        len(clients),
    )
    return server.advance(
        ParamVector(server.params.layout, server.params.values + update), trace
    )


def communication_cost(trace: RoundTrace) -> Tuple[int, int]:
    """
    :returns: ``(uploaded, downloaded)`` scalar counts of one round.
    """
    return trace.scalars_up, trace.scalars_down


def total_communication(server: ServerState) -> Tuple[int, int]:
    return server.scalars_up, server.scalars_down
