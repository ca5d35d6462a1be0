"""Exception types shared across the package."""


class UppkitError(Exception):
    """Base class for all package errors."""


class InputValidationError(UppkitError):
    """Raised when input files or objects violate the data contracts."""


class ConvergenceError(UppkitError):
    """Raised when an iterative solver fails to reach its tolerance."""
