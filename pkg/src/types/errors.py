"""
src/types/errors.py
Error types raised across the package. Everything derives from ValueError so
callers written against plain ValueError keep working.
"""

from typing import Optional


class CapsuleNetError(ValueError):
    """Base class for every error raised by this package."""


class DimensionError(CapsuleNetError):
    """Operand shapes or axes are incompatible with an operation."""


class ContractError(CapsuleNetError):
    """A precondition of an operation was violated by its caller."""


class ConfigurationError(CapsuleNetError):
    """A configuration value is invalid or inconsistent."""


class UnsupportedModeError(CapsuleNetError):
    """The requested operation is not available for this aggregation mode."""


class NumericError(CapsuleNetError):
    """An operation produced NaN or Inf."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        message = f"non-finite values produced by op '{op}'"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class IdxParseError(CapsuleNetError):
    """Base class for IDX decoding failures. Always names the offending file."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class IdxMagicError(IdxParseError):
    pass


class IdxTruncatedError(IdxParseError):
    pass


class IdxCountMismatchError(IdxParseError):
    pass


class CheckpointError(CapsuleNetError):
    """Base class for checkpoint persistence failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointConfigMismatchError(CheckpointError):
    def __init__(self, field: str, expected: object, found: object):
        self.field = field
        super().__init__(
            f"checkpoint config mismatch on '{field}': expected {expected!r}, found {found!r}"
        )


class DecoderMissingError(CapsuleNetError):
    def __init__(self, detail: Optional[str] = None):
        super().__init__(detail or "model has no reconstruction decoder")
