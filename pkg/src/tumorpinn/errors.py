"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid architecture, config key or parameter combination."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared during evaluation."""


class DataError(ValueError):
    """Observation data violates its contract (bad labels, missing times)."""


class ModeError(ValueError):
    """Operation called with data or parameters of the wrong mode."""


class NoBoundaryError(ValueError):
    """A density profile never crosses the requested threshold."""
