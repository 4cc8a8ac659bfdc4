"""Exception hierarchy. The CLI maps these onto exit codes."""


class ChexHistoryError(Exception):
    """Base class for all package errors."""


class UsageError(ChexHistoryError):
    """Bad flags or configuration values."""


class DataError(ChexHistoryError):
    """Malformed or missing input data."""


class ShapeError(ChexHistoryError, ValueError):
    """Tensor dimensions do not line up."""


class NumericalError(ChexHistoryError, FloatingPointError):
    """A NaN or Inf showed up where finite values are required."""
