"""Exception hierarchy shared by every module."""


class SegError(Exception):
    """Base class for all package errors."""


class DimensionError(SegError, ValueError):
    pass


class ConfigError(SegError, ValueError):
    pass


class DataError(SegError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MetricError(SegError, ValueError):
    pass


class TrainingError(SegError, RuntimeError):
    pass


class NumericError(SegError, ArithmeticError):
    pass


class CheckpointError(SegError, IOError):
    pass
