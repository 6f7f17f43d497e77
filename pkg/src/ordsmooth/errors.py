"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 2, data problems
exit 3 and numerical failures exit 4.
"""


class OrdsmoothError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(OrdsmoothError):
    """A required column is missing or the column-role map is inconsistent."""


class CodingError(OrdsmoothError):
    """A stage label or factor level is not part of the registered coding."""


class ParseError(OrdsmoothError):
    """A cell could not be parsed; carries the offending row number."""


class FormulaError(OrdsmoothError):
    """Model-formula text could not be parsed; carries the byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class DesignError(OrdsmoothError):
    """Design or penalty construction failed (dimension/level problems)."""


class FitError(OrdsmoothError):
    """Numerical optimisation failed; carries the last iterate if any."""

    def __init__(self, message: str, last_iterate=None, grad_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


class PredictionError(OrdsmoothError):
    """New data is incompatible with a fitted model."""


class ArchiveError(OrdsmoothError):
    """A model archive is malformed or has an unsupported version."""
