"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, data problems with 3, numerical failures with 4.
"""


class SubgpError(Exception):
    """Base class for all package errors."""


class ConfigError(SubgpError):
    """Invalid configuration or arguments (exit code 2)."""


class DataError(SubgpError):
    """Malformed or degenerate input data (exit code 3)."""


class NumericalError(SubgpError):
    """Numerical failure such as an unfittable model (exit code 4)."""
