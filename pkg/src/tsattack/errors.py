"""Exception hierarchy and CLI exit codes."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class TsAttackError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ShapeError(TsAttackError, ValueError):
    exit_code = EXIT_NUMERIC


class NumericError(TsAttackError, ArithmeticError):
    """A computation produced NaN or Inf."""

    exit_code = EXIT_NUMERIC


class ConfigError(TsAttackError, ValueError):
    exit_code = EXIT_CONFIG


class DataError(TsAttackError, ValueError):
    exit_code = EXIT_DATA
