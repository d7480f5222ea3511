"""Exception hierarchy shared across the package."""


class KeatError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(KeatError, ValueError):
    pass


class DomainError(KeatError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class NumericError(KeatError, FloatingPointError):
    """A computation produced NaN/Inf or would overflow."""


class ParseError(KeatError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateDataError(DomainError):
    """Data is valid but makes a downstream quantity meaningless (e.g. sigma == 0)."""


class TrainingError(KeatError, RuntimeError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)


class ConfigError(KeatError, ValueError):
    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)
