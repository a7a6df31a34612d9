"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class ConfigError(ValueError):
    """Invalid configuration or argument value."""


class DataError(ValueError):
    """Malformed or inconsistent input data (parse/validation failures)."""


class TapeError(RuntimeError):
    """Backward pass requested on a tensor the tape did not produce."""
