"""Exception types. Each carries the CLI exit code it maps to."""


class DPCAError(Exception):
    exit_code = 1


class ConfigError(DPCAError, ValueError):
    exit_code = 2


class DataError(DPCAError, ValueError):
    exit_code = 3


class NumericError(DPCAError, ArithmeticError):
    exit_code = 4


class DecodeError(DataError):
    """A LocalSummary payload could not be decoded.

    ``code`` is one of ``"magic"``, ``"version"``, ``"truncation"``,
    ``"checksum"`` or ``"invariant"``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
