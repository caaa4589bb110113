"""Exception vocabulary shared across the package."""


class HaiCollabError(Exception):
    """Base class for all package errors."""


class ShapeError(HaiCollabError):
    """Operand dimensions are incompatible."""


class ParameterError(HaiCollabError):
    """A parameter is outside its valid range."""


class NumericError(HaiCollabError):
    """A computation produced non-finite values."""


class InputError(HaiCollabError):
    """An input value violates a documented precondition."""


class ParseError(HaiCollabError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(HaiCollabError):
    """Parsed data is structurally valid but violates an invariant."""


class ConfigError(HaiCollabError):
    """An experiment config failed validation; message names the field."""


class MissingArtifactError(HaiCollabError):
    """A pipeline stage ran before its prerequisite; names the required command."""

    def __init__(self, message: str, required_command: str):
        super().__init__(message)
        self.required_command = required_command
