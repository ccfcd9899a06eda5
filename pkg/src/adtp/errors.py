"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class AdtpError(Exception):
    """Base class for all package errors."""


class ConfigError(AdtpError):
    """Invalid configuration key, value, or combination."""


class DataError(AdtpError):
    """Unusable input data (malformed CSV, irreparable gap, ...)."""


class NumericError(AdtpError):
    """Numeric failure during model computation (overflow, divergence)."""
