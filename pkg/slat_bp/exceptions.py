"""
Custom exceptions for slat-bp.
"""

from typing import Optional


class SlatError(Exception):
    """Base exception for all slat-bp errors."""

    pass


class ValidationError(SlatError, ValueError):
    """Raised when an input record, prior, model or file fails validation."""

    pass


class ConfigurationError(ValidationError):
    """Raised when a scenario configuration cannot produce a scenario."""

    pass


class CellNotFoundError(SlatError, IndexError):
    """Raised when a cell id is outside the cell map."""

    pass


class BeliefCollapseError(SlatError):
    """
    Raised when an updated belief has no positive weight left.

    Args:
        variable: Name of the offending variable ("target" or "sensor <n>")
        t: Time slot at which the update failed
    """

    def __init__(self, variable: str, t: int, detail: Optional[str] = None):
        self.variable = variable
        self.t = t
        message = f"Belief collapse of {variable} at slot {t}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
