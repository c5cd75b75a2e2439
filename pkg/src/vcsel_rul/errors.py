"""Exception hierarchy shared by every stage of the toolkit."""

from __future__ import annotations

from typing import Any


class RulToolkitError(ValueError):
    """Base class; callers that only know ``ValueError`` still catch it."""


class ConfigurationError(RulToolkitError):
    """A configuration value or layer wiring is inconsistent."""


class InputError(RulToolkitError):
    """An argument is structurally unusable (e.g. an empty sequence)."""


class UsageError(RulToolkitError):
    """An API was called out of order or with incompatible artifacts."""


class DataError(RulToolkitError):
    """Measured or generated data violates a physical precondition."""


class ParseError(RulToolkitError):
    """A file on disk could not be decoded."""


class NumericalError(RulToolkitError):
    """A NaN or infinity appeared where finite values are required."""


class TrainingAborted(NumericalError):
    def __init__(self, message: str, epoch: int, last_good: list[Any]) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.last_good = last_good
