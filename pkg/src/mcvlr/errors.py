"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError -> 3, NumericError -> 4.
"""


class McvlrError(Exception):
    """Base class for all package errors."""


class DataError(McvlrError):
    """Malformed, missing or inconsistent input data."""


class DimensionMismatchError(DataError):
    """Operands disagree on embedding dimension."""


class MissingFeatureError(DataError):
    """A video id has no entry in the feature store."""


class NumericError(McvlrError):
    """Non-finite values or a numerically invalid operation."""
