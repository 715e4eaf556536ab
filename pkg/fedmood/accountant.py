"""
Moments accountant for rounds of the Poisson-subsampled Gaussian mechanism.

For an integer order ``lam`` the log moment of one round with sampling
probability ``p`` and noise multiplier ``z`` is ``log A(lam + 1)`` where::

    A(a) = sum_i C(a, i) p^i (1 - p)^(a - i) exp((i * i - i) / (2 z^2))

which reduces to ``lam (lam + 1) / (2 z^2)`` when ``p == 1``. Log moments add
up over rounds and convert to ``(epsilon, delta)`` through::

    epsilon = min_lam (alpha(lam) + log(1 / delta)) / lam
"""
import json
import logging
import math
from functools import lru_cache
from typing import Iterable, Iterator, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from fedmood.conf import settings

logger = logging.getLogger(__name__)

#: Reported epsilon when a round adds no noise.
UNBOUNDED = math.inf

LEDGER_FORMAT = "fedmood-ledger"
LEDGER_VERSION = 1


def _check_round(p: float, z: float) -> None:
    if not 0 < p <= 1:
        raise ValueError(f"Sampling probability must be in (0, 1], got {p}")
    if not z >= 0:
        raise ValueError(f"Noise multiplier must be non-negative, got {z}")


@lru_cache(maxsize=256)
def _round_log_moments(p: float, z: float, orders: int) -> Sequence[float]:
    if z == 0:
        return (UNBOUNDED,) * orders
    lambdas = np.arange(1, orders + 1, dtype=np.float64)
    if p == 1:
        return tuple(lambdas * (lambdas + 1) / (2 * z * z))
    moments = []
    for lam in range(1, orders + 1):
        a = lam + 1
        i = np.arange(a + 1, dtype=np.float64)
        log_terms = (
            gammaln(a + 1)
            - gammaln(i + 1)
            - gammaln(a - i + 1)
            + i * math.log(p)
            + (a - i) * math.log1p(-p)
            + (i * i - i) / (2 * z * z)
        )
        # Rounding may push the exact-zero lower bound slightly negative.
        moments.append(max(0.0, float(logsumexp(log_terms))))
    return tuple(moments)


def round_log_moments(p: float, z: float, orders: Optional[int] = None) -> np.ndarray:
    """
    Log moments of a single round at orders ``1..orders``.
    """
    _check_round(p, z)
    if orders is None:
        orders = settings.FEDMOOD_ACCOUNTANT_ORDERS
    return np.array(_round_log_moments(float(p), float(z), int(orders)))


class AccountantState(NamedTuple):
    """
    Accumulated log moments ``alpha(lam)`` for ``lam`` in ``1..len(log_moments)``.
    """

    log_moments: np.ndarray
    rounds: int = 0

    @classmethod
    def empty(cls, orders: Optional[int] = None) -> "AccountantState":
        if orders is None:
            orders = settings.FEDMOOD_ACCOUNTANT_ORDERS
        if orders < 1:
            raise ValueError(f"Need at least one moment order, got {orders}")
        return cls(np.zeros(orders), 0)

    @property
    def orders(self) -> np.ndarray:
        return np.arange(1, self.log_moments.shape[0] + 1)


def compose_round(
    state: AccountantState, p: float, z: float, count: int = 1
) -> AccountantState:
    """
    Add ``count`` identical rounds to ``state``.
    """
    moments = round_log_moments(p, z, state.log_moments.shape[0])
    return AccountantState(state.log_moments + count * moments, state.rounds + count)


def epsilon_at_delta(state: AccountantState, delta: float) -> float:
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if state.rounds == 0:
        return 0.0
    candidates = (state.log_moments + math.log(1 / delta)) / state.orders
    epsilon = float(np.min(candidates))
    if math.isinf(epsilon):
        return UNBOUNDED
    return max(0.0, epsilon)


def rounds_until_budget(
    p: float,
    z: float,
    delta: float,
    budget: float,
    orders: Optional[int] = None,
) -> int:
    """
    The largest number of rounds whose composed epsilon stays within
    ``budget``, capped at ``FEDMOOD_MAX_BUDGET_ROUNDS``.
    """
    moments = round_log_moments(p, z, orders)
    cap = settings.FEDMOOD_MAX_BUDGET_ROUNDS

    def fits(rounds: int) -> bool:
        state = AccountantState(rounds * moments, rounds)
        return epsilon_at_delta(state, delta) <= budget

    if not fits(1):
        return 0
    low, high = 1, 2
    while fits(high):
        if high >= cap:
            logger.warning("Budget %s not exhausted within %d rounds", budget, cap)
            return cap
        low, high = high, min(2 * high, cap)
    while high - low > 1:
        middle = (low + high) // 2
        if fits(middle):
            low = middle
        else:
            high = middle
    return low


class LedgerEntry(NamedTuple):
    sampling_probability: float
    noise_multiplier: float


class PrivacyLedger:
    """
    Append-only record of the ``(p, z)`` of every private round.

    The number of moment orders tracked is the ``orders`` attribute, falling
    back to the ``FEDMOOD_ACCOUNTANT_ORDERS`` setting.
    """

    orders: Optional[int] = None

    def __init__(
        self, entries: Iterable[LedgerEntry] = (), orders: Optional[int] = None
    ):
        if orders is not None:
            self.orders = orders
        self._entries: List[LedgerEntry] = []
        self._state: Optional[AccountantState] = None
        for entry in entries:
            self.append(*entry)

    def get_option(self, option: str):
        """
        Get a configuration option, trying the ledger attribute first and
        falling back to a Django project setting.
        """
        value = getattr(self, option, None)
        if value is not None:
            return value
        return getattr(settings, f"FEDMOOD_ACCOUNTANT_{option.upper()}")

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[LedgerEntry]:
        return iter(self._entries)

    def __repr__(self):
        return f"{self.__class__.__name__}({len(self)} rounds)"

    @property
    def entries(self) -> tuple:
        return tuple(self._entries)

    def append(self, p: float, z: float) -> None:
        _check_round(p, z)
        self._entries.append(LedgerEntry(float(p), float(z)))

    def state(self) -> AccountantState:
        """
        The composition of every entry, extending the last computed state with
        the entries appended since.
        """
        orders = self.get_option("orders")
        state = self._state
        if state is None or state.log_moments.shape[0] != orders:
            state = AccountantState.empty(orders)
        for entry in self._entries[state.rounds :]:
            state = compose_round(state, *entry)
        self._state = state
        return state

    def epsilon(self, delta: Optional[float] = None) -> float:
        if delta is None:
            delta = settings.FEDMOOD_DEFAULT_DELTA
        return epsilon_at_delta(self.state(), delta)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": LEDGER_FORMAT,
                "version": LEDGER_VERSION,
                "entries": [list(entry) for entry in self._entries],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PrivacyLedger":
        data = json.loads(text)
        if data.get("format") != LEDGER_FORMAT:
            raise ValueError(f"Not a {LEDGER_FORMAT} document")
        if data.get("version") != LEDGER_VERSION:
            raise ValueError(f"Unsupported ledger version {data.get('version')!r}")
        return cls(LedgerEntry(*entry) for entry in data["entries"])
