"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage/configuration problems
exit with 2, malformed or inconsistent input data with 3, and numeric
failures during training or inference with 4.
"""


class BcgnnError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BcgnnError):
    """Invalid configuration: bad hyperparameter, unknown option, bad combination."""


class DataError(BcgnnError):
    """Malformed or inconsistent input data or serialized artifacts."""


class ShapeError(DataError):
    """Operands with incompatible shapes. Carries both shapes in the message."""


class NumericError(BcgnnError):
    """Numeric failure at runtime, e.g. a non-finite training loss."""
