"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FifsegError(Exception):
    exit_code = 1


class ConfigError(FifsegError, ValueError):
    """Invalid configuration or tensor-shape contract violation."""

    exit_code = 2


class DegenerateBatchError(ConfigError):
    pass


class DataError(FifsegError, ValueError):
    exit_code = 3


class NumericError(FifsegError, ArithmeticError):
    exit_code = 4
