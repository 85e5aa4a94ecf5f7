"""Exception types raised by the engine."""

from __future__ import annotations


class CdsXvaError(Exception):
    """Base class for all engine errors."""


class ConfigError(CdsXvaError, ValueError):
    """Invalid model or run configuration.

    ``path`` points at the offending config entry (``"margin.haircut"``) when
    the error comes from file validation.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SimulationFault(CdsXvaError, RuntimeError):
    """A simulation produced a non-finite value."""


class PricingError(CdsXvaError, ArithmeticError):
    """A price is undefined for the given curve (e.g. zero risky annuity)."""


class MarginStateError(CdsXvaError, RuntimeError):
    """Margin account operation not allowed in the current state."""
