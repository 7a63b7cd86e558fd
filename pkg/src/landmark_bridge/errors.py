"""Exception types raised by the library."""

from __future__ import annotations


class LandmarkError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(LandmarkError, ValueError):
    """An input violates a documented precondition."""


class DegenerateMetricError(LandmarkError):
    """The cometric is not positive definite (e.g. coincident landmarks).

    ``step`` is the time index at which a simulation hit the degeneracy,
    when known.
    """

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (time index {step})"
        super().__init__(message)
        self.step = step


class EstimationFailedError(LandmarkError):
    """Every Monte Carlo sample of an estimate was aborted."""
