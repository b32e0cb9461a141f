"""Exception types shared across the package."""


class PolyIVError(Exception):
    """Base class for all package errors."""


class DataError(PolyIVError, ValueError):
    """Malformed or invalid input data."""


class AssumptionError(PolyIVError):
    """A statistical requirement of the estimator fails on the given data.

    The CLI maps this to exit status 1.
    """
