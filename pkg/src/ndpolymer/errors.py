from __future__ import annotations


class ValidationError(ValueError):
    """A violated precondition. ``condition`` names the failed window."""

    exit_code = 2

    def __init__(self, message: str, condition: str | None = None):
        super().__init__(message)
        self.condition = condition or message


class WindowError(ValidationError):
    """Parameters outside the region where a limit object is finite."""


class NumericalDiagnostic(RuntimeError):
    """A numerical check failed (quadrature, ESS, zero hits)."""

    exit_code = 3
