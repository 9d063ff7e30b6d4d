import logging

from ..domain.exceptions import ErrorCode, TokenfoldException

logger = logging.getLogger(__name__)


ErrorCodeExitMap = {
    ErrorCode.DEGENERATE_GEOMETRY: 3,
    ErrorCode.SHAPE_MISMATCH: 3,
    ErrorCode.CONFIG_ERROR: 2,
    ErrorCode.CACHE_INVALID: 3,
    ErrorCode.PARSE_ERROR: 4,
    ErrorCode.FORMAT_ERROR: 4,
    ErrorCode.MODEL_STORE_ERROR: 5,
    ErrorCode.INVARIANT_VIOLATION: 6,
}

UNEXPECTED_EXIT = 1


def tokenfold_exception_handler(exc: TokenfoldException) -> int:
    logger.error(f"{exc.error}: {exc.detail}")
    return ErrorCodeExitMap[exc.error]


def unexpected_exception_handler(exc: BaseException) -> int:
    logger.exception(f"Unexpected failure: {exc!r}")
    return UNEXPECTED_EXIT


def handle_exception(exc: BaseException) -> int:
    if isinstance(exc, TokenfoldException):
        return tokenfold_exception_handler(exc)
    return unexpected_exception_handler(exc)
