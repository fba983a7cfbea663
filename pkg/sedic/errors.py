"""
Structured errors raised by the sedic codecs, model clients and pipelines.

Every error derives from `SedicError`. Errors describing bad input values also
derive from `ValueError`, so callers catching the builtin keep working.
"""


class SedicError(Exception):
    """Base class of every structured sedic error."""


# --- Container ---


class ContainerError(SedicError, ValueError):
    """The container stream or object is malformed."""


class MagicMismatch(ContainerError):
    pass


class UnsupportedVersion(ContainerError):
    pass


class Truncated(ContainerError):
    """
    The stream ended before a field could be read.

    Attributes:
        offset (int): Byte offset at which more data was needed.
    """

    def __init__(self, offset: int, message: str | None = None):
        self.offset = offset
        super().__init__(message or f"stream truncated at offset {offset}")


class UnknownSectionType(ContainerError):
    pass


class DuplicateSection(ContainerError):
    pass


class InvariantViolation(ContainerError):
    pass


class ParseLimitExceeded(ContainerError):
    pass


class ZeroArea(ContainerError):
    pass


# --- Text codec ---


class TextCodecError(SedicError, ValueError):
    pass


class CorruptBitstream(TextCodecError):
    pass


class LengthMismatch(TextCodecError):
    pass


# --- Mask codec ---


class MaskCodecError(SedicError, ValueError):
    pass


class RunOverflow(MaskCodecError):
    pass


class TruncatedData(MaskCodecError):
    pass


class NonDivisibleFactor(MaskCodecError):
    pass


class UnknownMaskEncoding(MaskCodecError):
    pass


# --- Reference codec ---


class RefCodecError(SedicError, ValueError):
    pass


class ImageTooSmall(RefCodecError):
    pass


class UnknownCodec(RefCodecError):
    pass


class CorruptPayload(RefCodecError):
    pass


class BudgetInfeasible(RefCodecError):
    """
    The bit budget cannot be met.

    Attributes:
        minimum_bits (int): Smallest achievable size in bits.
        suggested_target_bpp (float | None): Smallest target that would succeed (encoder only).
    """

    def __init__(self, minimum_bits: int, message: str | None = None, suggested_target_bpp: float | None = None):
        self.minimum_bits = minimum_bits
        self.suggested_target_bpp = suggested_target_bpp
        super().__init__(message or f"budget infeasible, minimum achievable is {minimum_bits} bits")


# --- Guidance ---


class GuidanceError(SedicError, ValueError):
    pass


class ZeroAttentionMass(GuidanceError):
    pass


class DimMismatch(GuidanceError):
    pass


# --- Model backends ---


class BackendError(SedicError):
    pass


class BackendUnavailable(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class EmptyMask(BackendError):
    pass


class BudgetViolationCorrected(UserWarning):
    """A backend answer exceeded the word caps and was truncated client-side."""


# --- Pipelines ---


class PipelineError(SedicError, ValueError):
    pass


class NonPositiveTarget(PipelineError):
    pass


class MaskResolutionError(PipelineError):
    pass


class EmptyContainer(PipelineError):
    pass
