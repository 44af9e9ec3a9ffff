"""Exception types shared across the package."""


class BfanError(Exception):
    """Base class for package errors."""


class ContractViolation(BfanError, ValueError):
    """A precondition of an operation was not met.

    The message is prefixed with the module that detected the violation,
    e.g. ``[nn-ops.conv2d] channel mismatch``.
    """

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"[{where}] {message}")


class DecodeError(BfanError):
    """Malformed image or checkpoint bytes."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConfigError(BfanError):
    """Bad configuration text, unknown keys, or unusable run setup."""
