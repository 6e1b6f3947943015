"""Exception hierarchy shared across the package."""


class GlycoError(Exception):
    """Base class for all errors raised by this package."""


class InvalidValueError(GlycoError, ValueError):
    """A value violates a domain precondition (non-finite, out of range, wrong shape)."""


class ConfigError(GlycoError):
    """Configuration could not be resolved or is inconsistent."""


class DataError(GlycoError):
    """Input data is missing, insufficient, or malformed."""


class FormatError(DataError):
    """A serialized artifact violates its file format contract."""


class NumericError(GlycoError):
    """A numeric computation failed (non-finite intermediates, no converged fit)."""
