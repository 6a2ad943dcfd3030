"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 1,
numeric failures exit 2, file/format problems exit 3.
"""


class TiedAugError(Exception):
    """Base class for all package errors."""


class ContractViolation(TiedAugError):
    """An operation was called with arguments violating its contract."""


class ConfigurationError(TiedAugError):
    """A spec/config object or config file is invalid."""


class NumericError(TiedAugError):
    """A computation produced NaN/Inf or failed an internal numeric check."""


class FormatError(TiedAugError):
    """A file (checkpoint, dataset, label budget) is malformed."""
