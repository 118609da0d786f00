"""Exception hierarchy. The CLI maps each class to an exit code."""


class GraphCPError(Exception):
    exit_code = 1


class ConfigError(GraphCPError, ValueError):
    """Bad arguments, unknown method name, alpha out of range."""

    exit_code = 2


class DataError(GraphCPError, ValueError):
    """Missing or malformed input files, inconsistent shapes."""

    exit_code = 3


class NumericError(GraphCPError, ArithmeticError):
    """Non-finite values or a computation that cannot proceed numerically."""

    exit_code = 4
