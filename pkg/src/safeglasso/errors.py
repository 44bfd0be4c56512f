"""Exception types shared across the package."""


class SafeGlassoError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SafeGlassoError, ValueError):
    """Invalid user-supplied configuration (basis sizes, grids, alpha...)."""


class DomainError(SafeGlassoError, ValueError):
    """Evaluation point outside the domain of a basis."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = [] if indices is None else list(indices)


class DataError(SafeGlassoError, ValueError):
    """Malformed or insufficient data."""


class NumericalError(SafeGlassoError, ArithmeticError):
    """A factorization or solve that cannot be completed."""
