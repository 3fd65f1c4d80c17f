"""Exception hierarchy shared by every module.

The CLI maps the three families below to distinct exit codes.
"""


class SealError(Exception):
    """Base class for all package errors."""


class ConfigError(SealError, ValueError):
    """Invalid configuration value or combination."""


class DimensionError(SealError, ValueError):
    """Operand shapes do not agree."""


class UsageError(SealError, RuntimeError):
    """An API was called outside its contract."""


class ValidationError(SealError, ValueError):
    """A graph or dataset violates a structural invariant."""


class DataFormatError(SealError, ValueError):
    """A file could not be parsed; carries the location when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ManifestMissingError(DataFormatError):
    pass


class VersionMismatchError(DataFormatError):
    pass


class ChecksumError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class OracleError(SealError, RuntimeError):
    """The label source could not answer a query."""


class SealAborted(SealError, RuntimeError):
    """An iterative run stopped early; ``result`` holds the partial history."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
