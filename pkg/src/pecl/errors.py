"""Error types shared across the package."""


class PeclError(Exception):
    """Base class for all library errors."""


class DataError(PeclError):
    """Bad or missing input data: corpus files, config files, ledgers, matrices."""


class NumericError(PeclError):
    """Non-finite values where finite numbers are required."""
