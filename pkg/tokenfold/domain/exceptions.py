from typing import Optional

from enum import StrEnum


class ErrorCode(StrEnum):
    """
    Error codes shared by every layer; the CLI maps them to exit codes.
    """

    #: Collinear or coincident atoms, rotation matrices too far from SO(3).
    DEGENERATE_GEOMETRY = "degenerate_geometry"

    #: Array shapes or lengths that do not agree.
    SHAPE_MISMATCH = "shape_mismatch"

    #: Invalid configuration value, unknown kind, out-of-range parameter.
    CONFIG_ERROR = "config_error"

    #: A partial cache update was requested against an invalid cache.
    CACHE_INVALID = "cache_invalid"

    #: Unreadable input text (PDB records).
    PARSE_ERROR = "parse_error"

    #: Values that cannot be written in a fixed-column format.
    FORMAT_ERROR = "format_error"

    #: Missing, corrupted or incompatible model container.
    MODEL_STORE_ERROR = "model_store_error"

    #: A verify-mode invariant check failed.
    INVARIANT_VIOLATION = "invariant_violation"


class TokenfoldException(Exception):
    """
    Base class of all domain exceptions.
    """

    def __init__(self, error: ErrorCode, detail: str):
        self.error = error
        self.detail = detail
        super().__init__(f"[{self.error.name}] {detail}")


class DegenerateGeometry(TokenfoldException):
    def __init__(self, detail: str = "Degenerate geometry."):
        super().__init__(error=ErrorCode.DEGENERATE_GEOMETRY, detail=detail)


class ShapeMismatch(TokenfoldException):
    def __init__(self, detail: str = "Shapes do not match."):
        super().__init__(error=ErrorCode.SHAPE_MISMATCH, detail=detail)


class ConfigError(TokenfoldException):
    def __init__(self, detail: str = "Invalid configuration."):
        super().__init__(error=ErrorCode.CONFIG_ERROR, detail=detail)


class CacheInvalid(TokenfoldException):
    def __init__(
        self,
        detail: str = "Cache is not valid; a partial update needs a populated cache.",
    ):
        super().__init__(error=ErrorCode.CACHE_INVALID, detail=detail)


class ParseError(TokenfoldException):
    def __init__(self, detail: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            detail = f"line {line_number}: {detail}"
        super().__init__(error=ErrorCode.PARSE_ERROR, detail=detail)


class FormatError(TokenfoldException):
    def __init__(self, detail: str = "Value cannot be formatted."):
        super().__init__(error=ErrorCode.FORMAT_ERROR, detail=detail)


class ModelStoreError(TokenfoldException):
    def __init__(self, detail: str = "Model container cannot be used."):
        super().__init__(error=ErrorCode.MODEL_STORE_ERROR, detail=detail)


class InvariantViolation(TokenfoldException):
    def __init__(self, check_id: str, detail: str):
        self.check_id = check_id
        super().__init__(error=ErrorCode.INVARIANT_VIOLATION, detail=f"{check_id}: {detail}")
