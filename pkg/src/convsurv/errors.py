"""Exception and warning types shared across the toolkit.

Every error carries a stable string ``code`` so the command line can emit
machine-readable failures.
"""

from __future__ import annotations


class ConvSurvError(ValueError):
    code = "E_INPUT"

    def __init__(self, message: str, *, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class InvalidInput(ConvSurvError):
    code = "E_INPUT"


class SchemaMismatch(ConvSurvError):
    code = "E_SCHEMA"


class ConvergenceError(ConvSurvError):
    code = "E_CONVERGENCE"


class ConvSurvWarning(UserWarning):
    """Recoverable data or fitting problem (dropped rows, skipped folds, ...)."""
