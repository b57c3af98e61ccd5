"""Exception types mapped to process exit codes by the command line tool."""


class ConfigError(ValueError):
    """Bad or unknown configuration (exit code 2)."""


class DataFormatError(RuntimeError):
    """Missing, truncated or inconsistent data files (exit code 3)."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to converge or produced non-finite values
    (exit code 4)."""
