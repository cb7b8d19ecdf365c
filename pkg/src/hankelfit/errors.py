"""Exception types shared across the package."""


class HankelFitError(Exception):
    """Base class for all package-specific failures."""


class DimensionError(HankelFitError, ValueError):
    """Inconsistent vector/matrix dimensions for a Hankel operator."""


class ConditioningError(HankelFitError, ArithmeticError):
    """A linear solve was refused because the system is numerically singular.

    Raised instead of silently regularizing: a regularized solve would
    invalidate the stationarity certificates attached to solver results.
    """


class LineSearchError(HankelFitError, RuntimeError):
    """The step-size search exhausted its curvature bound without acceptance."""


class GenerationError(HankelFitError, RuntimeError):
    """Random signal generation kept producing degenerate draws."""
