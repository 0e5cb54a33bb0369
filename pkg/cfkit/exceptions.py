"""Exception types for cfkit."""

from typing import Optional


class CfkitException(Exception):
    """Base exception for all cfkit errors."""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        context: Optional[str] = None,
    ):
        super().__init__(message)
        self.message = message
        self.field = field
        self.context = context


class ConfigurationError(CfkitException):
    """Raised when shapes, specs or config invariants do not line up."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message, field=field)


class NumericError(CfkitException):
    """Raised when an operator produces NaN or Inf."""

    def __init__(self, op: str, count: int):
        super().__init__(f"{op} produced {count} non-finite value(s)", context=op)
        self.op = op
        self.count = count


class IngestionError(CfkitException):
    """Raised when an image file cannot be decoded."""

    def __init__(self, message: str, path: str, offset: Optional[int] = None):
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{path}{where}: {message}", context=path)
        self.path = path
        self.offset = offset


class UsageError(CfkitException):
    """Raised for bad CLI usage, unknown formats or schema violations."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message, field=field)


class WeightMismatchError(CfkitException):
    """Raised when a weight file does not match the model's ParamStore."""

    def __init__(self, name: str, reason: str):
        super().__init__(f"weight mismatch at '{name}': {reason}", field=name)
        self.name = name
