"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numerical failures exit 3.
"""

from __future__ import annotations

__all__ = [
    "HTheoryError",
    "ParameterError",
    "DomainError",
    "AccuracyError",
    "DivergenceError",
    "DataError",
    "InsufficientDataError",
    "FitFailureError",
]


class HTheoryError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(HTheoryError, ValueError):
    """Invalid parameter combination (bad index pattern, no admissible contour, ...)."""


class DomainError(HTheoryError, ValueError):
    """Mathematically invalid input (gamma pole, non-positive argument, non-PD matrix)."""


class AccuracyError(HTheoryError, RuntimeError):
    """Numerical routine failed to converge to its tolerance.

    ``partial`` carries the best (value, error-estimate) pair available when
    the failure was raised, or None if nothing usable was computed.
    """

    def __init__(self, message: str, partial: tuple[float, float] | None = None):
        super().__init__(message)
        self.partial = partial


class DivergenceError(HTheoryError, RuntimeError):
    """A simulated trajectory left the trusted range.  ``level`` is 1-based."""

    def __init__(self, message: str, level: int | None = None):
        super().__init__(message)
        self.level = level


class DataError(HTheoryError, ValueError):
    """Malformed or unusable input data."""


class InsufficientDataError(DataError):
    """Input is well-formed but too small for the requested operation."""


class FitFailureError(HTheoryError, RuntimeError):
    """Every candidate in a fit search failed to produce a finite objective."""
