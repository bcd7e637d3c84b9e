"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Grid dimensions of the operands do not line up."""


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class DataError(ValueError):
    """A file or stream does not conform to its declared format."""


class NumericError(ArithmeticError):
    """Computation produced or received non-finite / unusable values."""


class TapeError(RuntimeError):
    """Differentiation-tape lifecycle violation (record after finish, double backward, ...)."""
