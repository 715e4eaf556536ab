from typing import Tuple


class ShapeError(ValueError):
    """
    Raised when array dimensions don't line up for an operation.
    """

    def __init__(self, operation: str, expected, got):
        self.operation = operation
        self.expected = expected
        self.got = got
        super().__init__(f"{operation}: expected shape {expected}, got {got}")


class LayoutError(ValueError):
    """
    Raised when two parameter vectors don't share the same layout.
    """


class ProtocolError(RuntimeError):
    """
    Raised when a federated round can't run (no clients, no weight, no ledger).
    """


VIEW_NAMES: Tuple[str, ...] = ("alphanumeric", "special", "accelerometer")

VIEW_FEATURES = {
    # duration, time since last keypress, dx, dy
    "alphanumeric": 4,
    "special": 6,
    "accelerometer": 3,
}

SPECIAL_KEYS: Tuple[str, ...] = (
    "auto-correct",
    "backspace",
    "space",
    "suggestion",
    "switching-keyboard",
    "other",
)

HEADS: Tuple[str, ...] = ("fc", "fm", "mvm")

PROTOCOLS: Tuple[str, ...] = (
    "centralized",
    "naive",
    "selective",
    "fedavg",
    "dp-fedavg",
)
