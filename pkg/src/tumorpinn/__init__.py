"""Physics-informed parameter identification for a porous-medium tumor-growth model."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DataError, ModeError, NoBoundaryError, NumericalError  # noqa: E402

__all__ = ["ConfigurationError", "DataError", "ModeError", "NoBoundaryError", "NumericalError", "__version__"]
