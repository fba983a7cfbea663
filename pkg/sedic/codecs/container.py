"""
SEDIC container: bit-exact serialization, parsing and size accounting.

Wire layout (little-endian, no padding):

    magic "SDC1" | version u8 | flags u8 | width u32 | height u32 | n_sections u8
    n_sections x (type u8 | len u32 | payload)
"""

import logging
import struct
from dataclasses import dataclass, field
from enum import IntEnum

import pandas as pd

from ..errors import (
    DuplicateSection,
    InvariantViolation,
    MagicMismatch,
    ParseLimitExceeded,
    Truncated,
    UnknownSectionType,
    UnsupportedVersion,
    ZeroArea,
)
from .mask_codec import MaskBlob
from .text_codec import TextBlob


MAGIC = b"SDC1"
VERSION = 1
FLAG_REFERENCE = 0x01
FLAG_OVERALL_TEXT = 0x02
MAX_SECTIONS = 255
PARSE_LIMIT = 64 * 1024 * 1024

_HEADER = struct.Struct("<4sBBIIB")
_SECTION = struct.Struct("<BI")
_U32 = struct.Struct("<I")
HEADER_SIZE = _HEADER.size
SECTION_OVERHEAD = _SECTION.size


class SectionType(IntEnum):
    REFERENCE = 0x01
    OVERALL_TEXT = 0x02
    OBJECT = 0x03
    METADATA = 0x04


# --- Domain types ---


@dataclass(frozen=True)
class ContainerHeader:
    width: int
    height: int
    flags: int
    n_sections: int
    magic: bytes = MAGIC
    version: int = VERSION


@dataclass(frozen=True)
class RefPayload:
    """Reference image bitstream tagged with the codec that produced it."""
    codec_id: int
    data: bytes

    def to_bytes(self) -> bytes:
        return bytes([self.codec_id]) + self.data


@dataclass(frozen=True)
class ObjectEntry:
    """One object: detail description and semantic mask. The object name is never stored."""
    detail: TextBlob
    mask: MaskBlob

    def to_bytes(self) -> bytes:
        text = self.detail.to_bytes()
        return _U32.pack(len(text)) + text + self.mask.to_bytes()


@dataclass(frozen=True)
class SemanticContainer:
    width: int
    height: int
    reference: RefPayload | None = None
    overall_text: TextBlob | None = None
    objects: tuple[ObjectEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def flags(self) -> int:
        flags = 0
        if self.reference is not None:
            flags |= FLAG_REFERENCE
        if self.overall_text is not None:
            flags |= FLAG_OVERALL_TEXT
        return flags

    @property
    def n_sections(self) -> int:
        return (self.reference is not None) + (self.overall_text is not None) + len(self.objects)

    @property
    def header(self) -> ContainerHeader:
        return ContainerHeader(width=self.width, height=self.height, flags=self.flags, n_sections=self.n_sections)

    def sections(self) -> list[tuple[SectionType, bytes]]:
        """Sections in stream order: REFERENCE, OVERALL_TEXT, then OBJECT in decoding order."""
        sections = []
        if self.reference is not None:
            sections.append((SectionType.REFERENCE, self.reference.to_bytes()))
        if self.overall_text is not None:
            sections.append((SectionType.OVERALL_TEXT, self.overall_text.to_bytes()))
        for entry in self.objects:
            sections.append((SectionType.OBJECT, entry.to_bytes()))
        return sections


# --- Serialize ---


def serialize(container: SemanticContainer) -> bytes:
    """
    Serializes a container to its wire form.

    Raises:
        InvariantViolation: If the dimensions are zero or out of range, or there are more than 255 sections.
    """
    if not (1 <= container.width < 1 << 32 and 1 <= container.height < 1 << 32):
        raise InvariantViolation(f"invalid container dimensions {container.width}x{container.height}")
    if container.n_sections > MAX_SECTIONS:
        raise InvariantViolation(f"{container.n_sections} sections, at most {MAX_SECTIONS} allowed")
    if container.reference is not None and not 0 <= container.reference.codec_id <= 255:
        raise InvariantViolation(f"codec id {container.reference.codec_id} does not fit in a byte")

    chunks = [_HEADER.pack(MAGIC, VERSION, container.flags, container.width, container.height, container.n_sections)]
    for section_type, payload in container.sections():
        chunks.append(_SECTION.pack(section_type, len(payload)))
        chunks.append(payload)
    return b"".join(chunks)


# --- Parse ---


def _parse_object(payload: bytes, offset: int) -> ObjectEntry:
    if len(payload) < _U32.size:
        raise Truncated(offset + len(payload), "object section text length truncated")
    (text_len,) = _U32.unpack_from(payload, 0)
    text_end = _U32.size + text_len
    if text_end > len(payload):
        raise Truncated(offset + len(payload), f"object text of {text_len} bytes overruns its section")
    detail = TextBlob.from_bytes(payload[_U32.size:text_end], base_offset=offset + _U32.size)
    mask = MaskBlob.from_bytes(payload[text_end:], base_offset=offset + text_end)
    return ObjectEntry(detail=detail, mask=mask)


def parse(stream: bytes) -> SemanticContainer:
    """
    Parses arbitrary bytes into a container, or raises a structured error.

    METADATA (0x04) and unknown types >= 0x05 are skipped by their length prefix.

    Parameters:
        stream (bytes): Candidate container bytes.

    Returns:
        SemanticContainer: The parsed container.

    Raises:
        ParseLimitExceeded: Stream larger than 64 MiB.
        MagicMismatch, UnsupportedVersion, Truncated, UnknownSectionType, DuplicateSection,
        InvariantViolation: As the stream dictates.
    """
    stream = bytes(stream)
    if len(stream) > PARSE_LIMIT:
        raise ParseLimitExceeded(f"stream of {len(stream)} bytes exceeds the {PARSE_LIMIT} byte parse limit")
    if len(stream) < len(MAGIC):
        if MAGIC.startswith(stream):
            raise Truncated(len(stream), "stream ends inside the magic")
        raise MagicMismatch(f"bad magic {stream!r}")
    if stream[:4] != MAGIC:
        raise MagicMismatch(f"bad magic {stream[:4]!r}")
    if len(stream) < HEADER_SIZE:
        raise Truncated(len(stream), "container header truncated")

    _, version, flags, width, height, n_sections = _HEADER.unpack_from(stream, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"container version {version} not supported")
    if flags & ~(FLAG_REFERENCE | FLAG_OVERALL_TEXT):
        raise InvariantViolation(f"reserved flag bits set (flags=0x{flags:02x})")
    if width == 0 or height == 0:
        raise InvariantViolation(f"zero image dimension {width}x{height}")

    reference = None
    overall_text = None
    objects = []
    offset = HEADER_SIZE
    for _ in range(n_sections):
        if offset + SECTION_OVERHEAD > len(stream):
            raise Truncated(len(stream), f"section header truncated at offset {offset}")
        section_type, payload_len = _SECTION.unpack_from(stream, offset)
        payload_start = offset + SECTION_OVERHEAD
        payload_end = payload_start + payload_len
        if payload_end > len(stream):
            raise Truncated(len(stream), f"section at offset {offset} claims {payload_len} bytes past the stream end")
        payload = stream[payload_start:payload_end]

        if section_type == SectionType.REFERENCE:
            if reference is not None:
                raise DuplicateSection(f"second REFERENCE section at offset {offset}")
            if not payload:
                raise Truncated(payload_start, "reference section lacks its codec id")
            reference = RefPayload(codec_id=payload[0], data=payload[1:])
        elif section_type == SectionType.OVERALL_TEXT:
            if overall_text is not None:
                raise DuplicateSection(f"second OVERALL_TEXT section at offset {offset}")
            overall_text = TextBlob.from_bytes(payload, base_offset=payload_start)
        elif section_type == SectionType.OBJECT:
            objects.append(_parse_object(payload, payload_start))
        elif section_type == 0:
            raise UnknownSectionType(f"section type 0x00 at offset {offset}")
        else:
            logging.info(f"Skipping section type 0x{section_type:02x} ({payload_len} bytes) at offset {offset}")
        offset = payload_end

    if offset != len(stream):
        raise InvariantViolation(f"{len(stream) - offset} trailing bytes after the last section")
    if bool(flags & FLAG_REFERENCE) != (reference is not None):
        raise InvariantViolation("reference flag disagrees with the sections present")
    if bool(flags & FLAG_OVERALL_TEXT) != (overall_text is not None):
        raise InvariantViolation("overall text flag disagrees with the sections present")

    return SemanticContainer(
        width=width, height=height, reference=reference, overall_text=overall_text, objects=tuple(objects)
    )


# --- Accounting ---


def bpp(stream_len_bytes: int, width: int, height: int) -> float:
    """Bits per pixel of a stream of `stream_len_bytes` bytes for a width x height image."""
    area = width * height
    if area <= 0:
        raise ZeroArea(f"image area {width}x{height} is not positive")
    return stream_len_bytes * 8 / area


def size_report(container: SemanticContainer) -> pd.DataFrame:
    """
    Per-section byte and bpp breakdown of a container.

    The 15-byte header is charged to the first section row, or to a lone HEADER row
    when the container has no sections.

    Returns:
        pd.DataFrame: Columns section, index, bytes, bits, bpp, share; bytes sum to the serialized length.
    """
    rows = []
    object_index = 0
    for section_type, payload in container.sections():
        index = None
        if section_type == SectionType.OBJECT:
            index = object_index
            object_index += 1
        rows.append({"section": section_type.name, "index": index, "bytes": SECTION_OVERHEAD + len(payload)})
    if rows:
        rows[0]["bytes"] += HEADER_SIZE
    else:
        rows.append({"section": "HEADER", "index": None, "bytes": HEADER_SIZE})

    df = pd.DataFrame(rows, columns=["section", "index", "bytes"])
    df["index"] = df["index"].astype("Int64")
    total = int(df["bytes"].sum())
    df["bits"] = df["bytes"] * 8
    df["bpp"] = df["bits"] / (container.width * container.height)
    df["share"] = df["bytes"] / total
    return df
