"""Exception types shared across the package."""


class ReserveDimError(Exception):
    """Base class for all package errors."""


class InputError(ReserveDimError):
    """Malformed or inconsistent input data, configuration, or arguments."""


class NumericError(ReserveDimError):
    """A numerical routine failed (non positive-definite matrix, ...)."""
