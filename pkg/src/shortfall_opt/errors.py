"""Exception and warning types shared across the package."""


class ShortfallOptError(Exception):
    """Base class for all package errors."""


class DomainError(ShortfallOptError, ValueError):
    """An argument lies outside the domain of the function."""


class NoBracket(ShortfallOptError):
    """Bracket expansion hit its cap without finding a sign change."""


class MaxIter(ShortfallOptError):
    """Iteration budget exhausted before the tolerance was met."""


class Infeasible(ShortfallOptError):
    """The risk budget cannot be met by any admissible terminal wealth."""


class ArbitrageDetected(ShortfallOptError):
    """The discrete market admits no equivalent martingale measure."""


class NonMonotoneWarning(UserWarning):
    """The multiplier residual is not strictly monotone; the smallest root was used."""


class BoundaryWarning(UserWarning):
    """A dual minimizer sits numerically on the positivity boundary."""
