"""Exception types shared across the package.

The CLI maps these to exit codes (config 2, data 3, numerical 4), so library
code raises the most specific one that applies.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, out-of-range parameters, unknown keys."""


class DataError(ValueError):
    """Invalid or missing data: unreadable files, malformed containers, bad signals."""


class NumericalError(ArithmeticError):
    """Non-finite or degenerate numbers where the algorithm needs finite ones."""
