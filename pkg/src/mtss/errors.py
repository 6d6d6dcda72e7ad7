"""Exception types shared across the package.

CLI exit-code mapping: UsageError/ConfigError -> 1, DataFormatError -> 2,
NumericsError -> 3.
"""


class UsageError(ValueError):
    """API misuse: bad argument combinations, wrong call sequencing."""


class ConfigError(UsageError):
    """Invalid configuration value or inconsistent dimensions."""


class DimensionError(UsageError):
    """Tensor shape mismatch; message names the offending shapes."""


class DataFormatError(ValueError):
    """Malformed input file (corpus, vectors, embedding container, checkpoint)."""


class NumericsError(ArithmeticError):
    """Non-finite value produced where the contract requires finite math."""
