"""Exception types raised by sparseqap."""


class QapError(Exception):
    """Base class for all sparseqap errors."""


class MalformedFileError(QapError, ValueError):
    """Raised when an instance file cannot be tokenized into a QAP instance."""

    def __init__(self, message, token_index=None):
        super().__init__(message)
        self.token_index = token_index


class UnsupportedInstanceError(QapError, ValueError):
    """Raised for instances outside the symmetric, null-diagonal, nonnegative class."""


class InvalidConfigError(QapError, ValueError):
    """Raised for invalid generator or solver parameters."""


class InstrumentationError(QapError, RuntimeError):
    """Raised when phase timings are requested from an uninstrumented run."""


class InsufficientPointsError(QapError, ValueError):
    """Raised when a slope fit gets fewer than three distinct sizes."""
