"""Exception types shared across the package."""


class GardeError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GardeError):
    """Invalid, inconsistent, or insufficient input data."""


class NumericalError(GardeError):
    """A solver hit a degenerate or singular configuration."""
