import struct

import numpy as np
import pytest

from sedic.codecs.container import (
    HEADER_SIZE,
    MAGIC,
    ObjectEntry,
    RefPayload,
    SemanticContainer,
    bpp,
    parse,
    serialize,
    size_report,
)
from sedic.codecs.mask_codec import SemanticMask, mask_encode
from sedic.codecs.text_codec import text_encode
from sedic.errors import (
    ContainerError,
    DuplicateSection,
    InvariantViolation,
    MagicMismatch,
    ParseLimitExceeded,
    Truncated,
    UnknownSectionType,
    UnsupportedVersion,
    ZeroArea,
)

from conftest import small_container


def header(flags=0, width=8, height=8, n_sections=0, version=1, magic=MAGIC) -> bytes:
    return struct.pack("<4sBBIIB", magic, version, flags, width, height, n_sections)


def section(section_type: int, payload: bytes) -> bytes:
    return struct.pack("<BI", section_type, len(payload)) + payload


def test_header_only_container():
    stream = serialize(SemanticContainer(width=768, height=512))
    assert stream == MAGIC + bytes([1, 0]) + struct.pack("<II", 768, 512) + bytes([0])
    assert len(stream) == HEADER_SIZE == 15
    assert parse(stream) == SemanticContainer(width=768, height=512)


def test_round_trip_with_every_section():
    container = small_container(n_objects=3)
    stream = serialize(container)
    parsed = parse(stream)
    assert parsed == container
    assert serialize(parsed) == stream
    assert parsed.flags == 0x03
    assert stream[15] == 0x01  # reference comes first


def test_sections_in_stream_order():
    types = [section_type.name for section_type, _ in small_container(n_objects=2).sections()]
    assert types == ["REFERENCE", "OVERALL_TEXT", "OBJECT", "OBJECT"]


def test_object_entries_never_carry_names():
    entry = ObjectEntry(detail=text_encode("a wooden chair"), mask=mask_encode(SemanticMask.ones(2, 2)))
    stream = serialize(SemanticContainer(width=16, height=16, objects=(entry,)))
    assert b"chair" not in stream


def test_empty_stream_is_truncated():
    with pytest.raises(Truncated) as error:
        parse(b"")
    assert error.value.offset == 0


def test_bad_magic():
    with pytest.raises(MagicMismatch):
        parse(b"PNG\x00" + bytes(11))
    with pytest.raises(MagicMismatch):
        parse(b"XY")


def test_unsupported_version():
    with pytest.raises(UnsupportedVersion):
        parse(header(version=2))


def test_truncated_header_and_section():
    with pytest.raises(Truncated):
        parse(header()[:10])
    with pytest.raises(Truncated):
        parse(header(n_sections=1))
    with pytest.raises(Truncated) as error:
        parse(header(n_sections=1) + struct.pack("<BI", 2, 50) + bytes(10))
    assert error.value.offset == 30


def test_every_prefix_of_a_valid_stream_fails():
    stream = serialize(small_container(n_objects=1))
    for cut in range(len(stream)):
        with pytest.raises(ContainerError):
            parse(stream[:cut])


def test_duplicate_sections():
    overall = section(2, text_encode("sky").to_bytes())
    with pytest.raises(DuplicateSection):
        parse(header(flags=0x02, n_sections=2) + overall + overall)
    reference = section(1, b"\x00abc")
    with pytest.raises(DuplicateSection):
        parse(header(flags=0x01, n_sections=2) + reference + reference)


def test_section_type_zero_is_unknown():
    with pytest.raises(UnknownSectionType):
        parse(header(n_sections=1) + section(0, b""))


def test_metadata_and_future_sections_are_skipped():
    stream = header(n_sections=2) + section(4, b"camera=x") + section(9, b"\x01\x02")
    assert parse(stream) == SemanticContainer(width=8, height=8)


def test_invariant_violations():
    with pytest.raises(InvariantViolation):
        parse(header(flags=0x80))
    with pytest.raises(InvariantViolation):
        parse(header(width=0))
    with pytest.raises(InvariantViolation):
        parse(header() + b"\x00")  # trailing byte
    with pytest.raises(InvariantViolation):
        parse(header(flags=0x01))  # flag without section
    with pytest.raises(InvariantViolation):
        serialize(SemanticContainer(width=0, height=8))


def test_reference_section_needs_codec_id():
    with pytest.raises(Truncated):
        parse(header(flags=0x01, n_sections=1) + section(1, b""))


def test_too_many_sections_rejected():
    entry = ObjectEntry(detail=text_encode(""), mask=mask_encode(SemanticMask.zeros(1, 1)))
    with pytest.raises(InvariantViolation):
        serialize(SemanticContainer(width=8, height=8, objects=(entry,) * 256))


def test_parse_limit():
    with pytest.raises(ParseLimitExceeded):
        parse(bytes(64 * 1024 * 1024 + 1))


def test_bpp():
    assert bpp(1228, 768, 512) == pytest.approx(0.02498, abs=1e-5)
    with pytest.raises(ZeroArea):
        bpp(10, 0, 512)


def test_size_report_sums_to_stream_length():
    container = small_container(n_objects=2)
    report = size_report(container)
    assert report["section"].tolist() == ["REFERENCE", "OVERALL_TEXT", "OBJECT", "OBJECT"]
    assert report["index"].tolist()[2:] == [0, 1]
    assert int(report["bytes"].sum()) == len(serialize(container))
    assert report["share"].sum() == pytest.approx(1.0)
    assert report["bpp"].sum() == pytest.approx(bpp(len(serialize(container)), 64, 64))


def test_size_report_of_header_only_container():
    report = size_report(SemanticContainer(width=10, height=10))
    assert report["section"].tolist() == ["HEADER"]
    assert report["bytes"].tolist() == [15]


def test_reference_payload_layout():
    payload = RefPayload(codec_id=0, data=b"\x10\x20")
    assert payload.to_bytes() == b"\x00\x10\x20"
    stream = serialize(SemanticContainer(width=4, height=4, reference=payload))
    assert parse(stream).reference == payload


def test_random_containers_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        objects = tuple(
            ObjectEntry(
                detail=text_encode(rng.integers(0, 256, int(rng.integers(0, 40)), dtype=np.uint8).tobytes()),
                mask=mask_encode(SemanticMask(6, 4, rng.random((4, 6)) < 0.5)),
            )
            for _ in range(int(rng.integers(0, 4)))
        )
        container = SemanticContainer(width=48, height=32, overall_text=text_encode("overall"), objects=objects)
        assert parse(serialize(container)) == container
