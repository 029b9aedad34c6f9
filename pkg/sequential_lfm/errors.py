"""Exception hierarchy for the sequential LFM package."""


class LatentForceError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(LatentForceError, ValueError):
    """Raised when an argument violates an operation's preconditions."""


class ConfigError(InvalidInputError):
    """Raised for an inconsistent experiment configuration. The message names the offending field."""


class DataError(InvalidInputError):
    """Raised for malformed observation data. The message names the offending row."""


class NumericalFailureError(LatentForceError, ArithmeticError):
    """Raised when a factorization or normalization fails even after jitter."""


class NoStationarySolutionError(NumericalFailureError):
    """Raised when prior dynamics are not Hurwitz, so no stationary covariance exists."""


class ApproximationFailureError(NumericalFailureError):
    """Raised when the spectral factorization of an approximated kernel fails."""


class InitializationError(NumericalFailureError):
    """Raised when an optimization objective is non-finite at its starting point."""


class ResourceLimitError(LatentForceError, MemoryError):
    """Raised when a brute-force oracle would exceed its size cap."""
