"""Error hierarchy.

Every error raised on purpose derives from ``SnapqError`` and from the
builtin it refines, so callers can catch either.
"""

from typing import Optional


class SnapqError(Exception):
    """Base class for all expected failures."""


class DimensionMismatchError(SnapqError, ValueError):
    """Vector, codebook or network dimensions disagree."""


class InsufficientDataError(SnapqError, ValueError):
    """Not enough data for the requested operation (N < K, empty input)."""


class InvalidCodeError(SnapqError, ValueError):
    """PQ code of wrong length or with an index outside [0, K)."""


class NonFiniteError(SnapqError, ArithmeticError):
    """NaN or Inf where finite values are required."""


class DivergenceError(NonFiniteError):
    """Training produced a non-finite loss."""


class DegenerateDirectionError(SnapqError, ArithmeticError):
    """Codeword coincides with the representation; no direction exists."""


class DegenerateLabelError(SnapqError, ValueError):
    """Labels cannot support triplets (single class or singleton class)."""


class LabelMismatchError(SnapqError, ValueError):
    """Labels are not aligned with vectors or rankings."""


class ClassTooSmallError(SnapqError, ValueError):
    """A class has too few samples for the split protocol."""


class ConfigError(SnapqError, ValueError):
    """Invalid configuration or missing artifact."""


class FormatError(SnapqError, ValueError):
    """Malformed binary or text container.

    Args:
        message: Description of the problem
        offset: Byte offset (or line number for text formats) where it was found
    """

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
