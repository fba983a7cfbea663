import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..errors import NonDivisibleFactor, RunOverflow, Truncated, TruncatedData, UnknownMaskEncoding


_HEADER = struct.Struct("<IIB")
MAX_MASK_PIXELS = 1 << 26


class MaskEncoding(IntEnum):
    RAW = 0
    RLE = 1


@dataclass(frozen=True, eq=False)
class SemanticMask:
    """Binary raster, row-major, True = object."""
    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise ValueError(f"mask bits shape {bits.shape} does not match {self.height}x{self.width}")
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other):
        if not isinstance(other, SemanticMask):
            return NotImplemented
        return self.width == other.width and self.height == other.height and np.array_equal(self.bits, other.bits)

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def zeros(cls, width: int, height: int) -> "SemanticMask":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    @classmethod
    def ones(cls, width: int, height: int) -> "SemanticMask":
        return cls(width, height, np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class MaskBlob:
    mask_w: int
    mask_h: int
    encoding: int
    data: bytes

    def to_bytes(self) -> bytes:
        """Serializes as mask_w u32 | mask_h u32 | encoding u8 | data."""
        return _HEADER.pack(self.mask_w, self.mask_h, self.encoding) + self.data

    @classmethod
    def from_bytes(cls, data: bytes, base_offset: int = 0) -> "MaskBlob":
        if len(data) < _HEADER.size:
            raise Truncated(base_offset + len(data), "mask blob header truncated")
        mask_w, mask_h, encoding = _HEADER.unpack_from(data, 0)
        if encoding not in (MaskEncoding.RAW, MaskEncoding.RLE):
            raise UnknownMaskEncoding(f"unknown mask encoding id {encoding}")
        return cls(mask_w=mask_w, mask_h=mask_h, encoding=encoding, data=bytes(data[_HEADER.size:]))


# --- Run-length helpers ---


def _write_varint(value: int, out: bytearray) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varints(data: bytes) -> list[int]:
    values = []
    value = 0
    shift = 0
    for byte in data:
        value |= (byte & 0x7F) << shift
        if byte & 0x80:
            shift += 7
            # a run never exceeds 2**64 pixels
            if shift > 63:
                raise RunOverflow("run length varint too long")
        else:
            values.append(value)
            value = 0
            shift = 0
    if shift:
        raise TruncatedData("unterminated run length varint")
    return values


def mask_runs(bits: np.ndarray) -> list[int]:
    """Alternating run lengths of the flattened raster, starting with a (possibly empty) zero run."""
    flat = np.asarray(bits, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    boundaries = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(boundaries).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def _encode_rle(bits: np.ndarray) -> bytes:
    out = bytearray()
    for run in mask_runs(bits):
        _write_varint(run, out)
    return bytes(out)


# --- Encode / Decode ---


def mask_encode(mask: SemanticMask) -> MaskBlob:
    """
    Losslessly codes a mask, choosing RLE only when it is strictly smaller than RAW.

    Parameters:
        mask (SemanticMask): Mask to code.

    Returns:
        MaskBlob: RAW (bit-packed, MSB-first) or RLE (LEB128 alternating runs) blob.
    """
    raw = np.packbits(mask.bits.ravel()).tobytes()
    rle = _encode_rle(mask.bits)
    if len(rle) < len(raw):
        return MaskBlob(mask.width, mask.height, MaskEncoding.RLE, rle)
    return MaskBlob(mask.width, mask.height, MaskEncoding.RAW, raw)


def mask_decode(blob: MaskBlob) -> SemanticMask:
    """
    Reconstructs the exact mask coded in `blob`.

    Raises:
        TruncatedData: If RAW data is short or a varint is cut.
        RunOverflow: If RLE runs do not sum to mask_w * mask_h.
        UnknownMaskEncoding: If the encoding id is not RAW or RLE.
    """
    n = blob.mask_w * blob.mask_h
    if blob.encoding == MaskEncoding.RAW:
        expected = (n + 7) // 8
        if len(blob.data) < expected:
            raise TruncatedData(f"RAW mask needs {expected} bytes, got {len(blob.data)}")
        if len(blob.data) > expected:
            raise TruncatedData(f"RAW mask carries {len(blob.data) - expected} extra bytes")
        flat = np.unpackbits(np.frombuffer(blob.data, dtype=np.uint8), count=n).astype(bool)
    elif blob.encoding == MaskEncoding.RLE:
        if n > MAX_MASK_PIXELS:
            raise RunOverflow(f"RLE mask of {n} pixels exceeds the {MAX_MASK_PIXELS} pixel limit")
        runs = _read_varints(blob.data)
        if sum(runs) != n:
            raise RunOverflow(f"runs sum to {sum(runs)}, mask has {n} pixels")
        values = np.arange(len(runs)) % 2 == 1
        flat = np.repeat(values, runs)
    else:
        raise UnknownMaskEncoding(f"unknown mask encoding id {blob.encoding}")
    return SemanticMask(blob.mask_w, blob.mask_h, flat.reshape(blob.mask_h, blob.mask_w))


# --- Resampling ---


def downsample_mask(mask: SemanticMask, factor: int) -> SemanticMask:
    """
    Majority downsampling by an integer factor, ties resolved to 1.

    Parameters:
        mask (SemanticMask): Mask to reduce.
        factor (int): Positive factor dividing both dimensions.

    Returns:
        SemanticMask: (w/f) x (h/f) mask.
    """
    if factor < 1 or mask.width % factor or mask.height % factor:
        raise NonDivisibleFactor(f"factor {factor} does not divide {mask.width}x{mask.height}")
    if factor == 1:
        return mask
    h, w = mask.height // factor, mask.width // factor
    counts = mask.bits.reshape(h, factor, w, factor).sum(axis=(1, 3))
    return SemanticMask(w, h, 2 * counts >= factor * factor)


def box_mask(width: int, height: int, box) -> SemanticMask:
    """Filled rectangle for a normalized (x0, y0, x1, y1) box, clipped to the raster."""
    x0 = int(np.clip(np.floor(box.x0 * width), 0, width))
    y0 = int(np.clip(np.floor(box.y0 * height), 0, height))
    x1 = int(np.clip(np.ceil(box.x1 * width), 0, width))
    y1 = int(np.clip(np.ceil(box.y1 * height), 0, height))
    bits = np.zeros((height, width), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return SemanticMask(width, height, bits)


def rle_counts_to_mask(counts: list[int], width: int, height: int) -> SemanticMask:
    """
    Builds a mask from alternating run counts starting with a zero run (segmenter responses).

    Raises:
        RunOverflow: If the counts do not cover width * height pixels.
    """
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts) or sum(counts) != width * height:
        raise RunOverflow(f"mask counts sum to {sum(counts)}, expected {width * height}")
    values = np.arange(len(counts)) % 2 == 1
    return SemanticMask(width, height, np.repeat(values, counts).reshape(height, width))
