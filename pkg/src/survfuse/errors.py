"""Exception types shared across the package."""


class SurvfuseError(Exception):
    """Base class for all survfuse errors."""


class ShapeError(SurvfuseError, ValueError):
    """Tensor dimensions do not match or do not chain."""


class StateError(SurvfuseError, RuntimeError):
    """Operation called in an invalid order or mode (e.g. backward before forward)."""


class ValidationError(SurvfuseError, ValueError):
    """Input data or parameters violate a documented precondition."""


class NumericalError(SurvfuseError, ArithmeticError):
    """A non-finite value appeared where finite math is required."""


class ConcordanceUndefinedError(SurvfuseError, ValueError):
    """No comparable pair exists, so the concordance index is undefined."""


class ConfigError(SurvfuseError, ValueError):
    """Invalid or contradictory run configuration."""
