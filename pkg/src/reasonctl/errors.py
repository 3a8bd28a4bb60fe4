from __future__ import annotations

import enum


class ReasonCtlError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ReasonCtlError):
    pass


class DataError(ReasonCtlError):
    pass


class DatasetFormatError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(ReasonCtlError):
    pass


class BackendErrorKind(str, enum.Enum):
    TRANSPORT = "TRANSPORT"
    TIMEOUT = "TIMEOUT"
    MALFORMED_OUTPUT = "MALFORMED_OUTPUT"


class BackendError(ReasonCtlError):
    def __init__(self, kind: BackendErrorKind, message: str = ""):
        self.kind = BackendErrorKind(kind)
        super().__init__(f"{self.kind.value}: {message}" if message else self.kind.value)


class TransportError(BackendError):
    def __init__(self, message: str = ""):
        super().__init__(BackendErrorKind.TRANSPORT, message)


class BackendTimeout(BackendError):
    def __init__(self, message: str = ""):
        super().__init__(BackendErrorKind.TIMEOUT, message)


class MalformedOutput(BackendError):
    def __init__(self, message: str = ""):
        super().__init__(BackendErrorKind.MALFORMED_OUTPUT, message)


class StageError(ReasonCtlError):
    """Wraps a failure with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
