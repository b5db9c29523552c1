"""Exceptions raised by the lab's modules.

Exit codes used by cli.py: precondition/config/format errors -> 2,
infeasibility results (BudgetInfeasible, CapacityUnreachable) -> 3.
"""
from typing import Any, List, Optional


class PreconditionError(ValueError):
    """An operation was called with inputs that violate its precondition."""


class ShapeMismatchError(PreconditionError):
    """An image or array does not have the configured shape."""


class DatasetFormatError(ValueError):
    """A dataset file is missing, truncated or of an unsupported version."""


class CheckpointFormatError(ValueError):
    """A checkpoint file is missing, truncated or of an unsupported version."""


class FitDegenerate(ValueError):
    """
    Raised when a latency fit cannot identify all of its parameters.

    Attributes:
        partial_model: whatever could be estimated (may be None).
        missing (str): name of the regime or parameter that could not be fit.
    """

    def __init__(self, message: str, partial_model: Any = None, missing: str = ""):
        super().__init__(message)
        self.partial_model = partial_model
        self.missing = missing


class BudgetInfeasible(ValueError):
    """The latency budget does not exceed the backbone time."""


class CapacityUnreachable(RuntimeError):
    """
    Adversarial training ran out of mask ratios without meeting C_max.

    Attributes:
        schedule_log (list): the per-stage records gathered before giving up.
    """

    def __init__(self, message: str, schedule_log: Optional[List[dict]] = None):
        super().__init__(message)
        self.schedule_log = schedule_log or []


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""
