"""
Exception hierarchy for the Veli correction toolkit.

The command-line front end maps each family to a process exit code:
ConfigError -> 1, DataError -> 2, NumericalError -> 3.
"""

from typing import Any, Dict, Optional


class VeliError(Exception):
    """Base class for every error raised deliberately by this package."""

    exit_code = 1


class ConfigError(VeliError):
    """
    Invalid or unknown configuration value.

    Args:
        field (str): Name of the offending configuration field.
        message (str): Human-readable explanation.
    """

    exit_code = 1

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(VeliError):
    """
    Input data violates a precondition.

    Args:
        message (str): Human-readable explanation.
        details (dict, optional): Structured context such as per-sensor counts.
    """

    exit_code = 2

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.details = dict(details or {})
        super().__init__(message)


class DimensionError(DataError):
    """Array dimension does not match what a network or model expects."""

    def __init__(self, what: str, expected: Any, actual: Any):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{what}: expected dimension {expected}, got {actual}",
            {"expected": expected, "actual": actual},
        )


class NumericalError(VeliError):
    """A loss, gradient or parameter became non-finite."""

    exit_code = 3


class TrainingAborted(NumericalError):
    """
    Training stopped on a non-finite loss.

    The model passed to the trainer keeps the parameters of the last finite
    step and is attached as ``model`` so callers can still save it.
    """

    def __init__(self, epoch: int, batch: int, history=None, model=None):
        self.epoch = epoch
        self.batch = batch
        self.history = list(history or [])
        self.model = model
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
