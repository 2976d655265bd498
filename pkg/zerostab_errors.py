"""
Exception hierarchy for the zero-stability toolkit.

Usage errors map to CLI exit code 2, domain errors to exit code 1.
"""


class ZeroStabError(Exception):
    """Base class for every error raised by the toolkit."""

    kind = "error"


class UsageError(ZeroStabError):
    """Malformed or contradictory arguments."""

    kind = "usage"


class DomainError(ZeroStabError, ValueError):
    """The request is well formed but mathematically invalid."""

    kind = "domain"


class InvalidMethodError(DomainError):
    kind = "invalid_method"


class InvalidRatioError(DomainError):
    kind = "invalid_ratio"


class NotPreconsistentError(DomainError):
    kind = "not_preconsistent"


class GridError(DomainError):
    kind = "grid"


class ControllerError(DomainError):
    kind = "controller"


class SingularMatrixError(DomainError):
    kind = "singular_matrix"


class RootFindingError(DomainError):
    kind = "root_finding"


class UnstableMethodError(DomainError):
    """Raised when a certificate needs strong stability (q < 1) and the method lacks it."""

    kind = "unstable_method"


class SingularMapError(DomainError):
    """Raised when a grid map has unbounded regularity."""

    kind = "singular_map"
