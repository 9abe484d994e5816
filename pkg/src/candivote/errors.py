"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numeric 4),
and the service maps them onto HTTP error responses.
"""


class CandivoteError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CandivoteError):
    """Invalid or inconsistent run configuration."""


class DataError(CandivoteError):
    """Unreadable or malformed dataset / snapshot / checkpoint file."""


class NumericError(CandivoteError):
    """Numeric contract violation: dimension mismatch, non-finite values,
    empty domains, degenerate fits."""
