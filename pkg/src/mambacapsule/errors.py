"""Exception types shared across the package."""


class MambaCapsuleError(Exception):
    pass


class DimensionError(MambaCapsuleError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(MambaCapsuleError, ValueError):
    """Invalid hyperparameter or configuration value."""


class NumericError(MambaCapsuleError, ArithmeticError):
    """A non-finite or out-of-domain value was produced or consumed."""


class ParseError(MambaCapsuleError, ValueError):
    """Malformed input file; message carries the location."""
