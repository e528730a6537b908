"""Exception hierarchy shared across the package."""


class SaemRegError(Exception):
    """Base class for all package errors."""


class InvalidBasisError(SaemRegError, ValueError):
    pass


class DomainError(SaemRegError, ValueError):
    """An evaluation point or transform argument lies outside its domain."""


class InvalidWarpError(SaemRegError, ValueError):
    """Warping increments are not a strictly interior simplex point."""


class ParameterError(SaemRegError, ValueError):
    """Model parameters violate their invariants (SPD covariance, tau > 0, ...)."""


class DataError(SaemRegError, ValueError):
    """Malformed input data."""


class NumericalError(SaemRegError, RuntimeError):
    """An iterative or linear-algebra routine failed to produce a finite answer."""


class UnsupportedOracleError(SaemRegError, ValueError):
    pass
