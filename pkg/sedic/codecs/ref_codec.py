"""
Reference image codecs.

Codec 0 (TINY) is a deterministic block transform codec producing the extremely
compressed reference image that seeds decoding:

    RGB -> YCbCr (BT.601 full range) -> 2x box downsample of every plane, a further
    2x for chroma -> 8x8 DCT -> flat quantization and zonal truncation scaled by q ->
    zigzag, differential DC -> zero-run/level bytes -> canonical Huffman.

Payloads are drawn from a quality ladder so that size never grows with q.

Codec id 1 is reserved for an external learned codec.
"""

import logging
import struct
from typing import Protocol

import numpy as np
from scipy import fft, ndimage

from ..errors import (
    BudgetInfeasible,
    ContainerError,
    CorruptPayload,
    ImageTooSmall,
    TextCodecError,
    UnknownCodec,
)
from ..utils.image_io import Image
from .container import RefPayload
from .text_codec import TextBlob, text_decode, text_encode


Q_MIN = 1
Q_MAX = 31
TINY_CODEC_ID = 0
EXTERNAL_CODEC_ID = 1
MIN_SIDE = 16
MAX_PIXELS = 1 << 24

_TINY_HEADER = struct.Struct("<BII")
_U32 = struct.Struct("<I")
_I16 = struct.Struct("<h")
_BLOCK = 8
_RUN_ESCAPE = 255
_LEVEL_ESCAPE = 255


def _zigzag_order() -> np.ndarray:
    cells = [(i, j) for i in range(_BLOCK) for j in range(_BLOCK)]
    cells.sort(key=lambda c: (c[0] + c[1], c[0] if (c[0] + c[1]) % 2 else c[1]))
    return np.array([i * _BLOCK + j for i, j in cells], dtype=np.int64)


ZIGZAG = _zigzag_order()


def quant_step(q: int) -> int:
    """Flat quantization step for quality q."""
    return 2 + 5 * q


def kept_coefficients(q: int) -> int:
    """Number of leading zigzag coefficients kept per block for quality q."""
    return max(1, 64 - 3 * (q - 1))


# --- Color and resampling ---


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _box_downsample(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    plane = np.pad(plane, ((0, h % 2), (0, w % 2)), mode="edge")
    return plane.reshape(plane.shape[0] // 2, 2, plane.shape[1] // 2, 2).mean(axis=(1, 3))


def _plane_shapes(width: int, height: int) -> list[tuple[int, int]]:
    luma = (-(-height // 2), -(-width // 2))
    chroma = (-(-luma[0] // 2), -(-luma[1] // 2))
    return [luma, chroma, chroma]


def _n_blocks(shape: tuple[int, int]) -> int:
    return -(-shape[0] // _BLOCK) * -(-shape[1] // _BLOCK)


# --- Block transform ---


def _forward_blocks(plane: np.ndarray) -> np.ndarray:
    """Padded 8x8 orthonormal DCT, returns (n_blocks, 64) in raster coefficient order."""
    h, w = plane.shape
    plane = np.pad(plane, ((0, -h % _BLOCK), (0, -w % _BLOCK)), mode="edge") - 128.0
    bh, bw = plane.shape[0] // _BLOCK, plane.shape[1] // _BLOCK
    blocks = plane.reshape(bh, _BLOCK, bw, _BLOCK).transpose(0, 2, 1, 3)
    coefficients = fft.dctn(blocks, axes=(-2, -1), norm="ortho")
    return coefficients.reshape(bh * bw, _BLOCK * _BLOCK)


def _inverse_blocks(coefficients: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    bh, bw = -(-h // _BLOCK), -(-w // _BLOCK)
    blocks = fft.idctn(coefficients.reshape(bh, bw, _BLOCK, _BLOCK), axes=(-2, -1), norm="ortho")
    plane = blocks.transpose(0, 2, 1, 3).reshape(bh * _BLOCK, bw * _BLOCK) + 128.0
    return plane[:h, :w]


# --- Zero-run / level bytes ---


def _level_bytes(value: int, out: bytearray) -> None:
    code = 2 * value - 2 if value > 0 else -2 * value - 1
    if code < _LEVEL_ESCAPE:
        out.append(code)
    else:
        out.append(_LEVEL_ESCAPE)
        out += _I16.pack(value)


def run_level_encode(sequence: np.ndarray) -> bytes:
    """Zero-run/level bytes of an integer sequence; trailing zeros are omitted."""
    out = bytearray()
    previous = -1
    for position in np.flatnonzero(sequence).tolist():
        run = position - previous - 1
        while run >= _RUN_ESCAPE:
            out.append(_RUN_ESCAPE)
            run -= _RUN_ESCAPE
        out.append(run)
        _level_bytes(int(sequence[position]), out)
        previous = position
    return bytes(out)


def run_level_decode(data: bytes, length: int) -> np.ndarray:
    """Inverse of `run_level_encode` for a sequence of `length` values."""
    sequence = np.zeros(length, dtype=np.int64)
    index = 0
    position = 0
    n = len(data)
    while position < n:
        run = data[position]
        position += 1
        index += run
        if run == _RUN_ESCAPE:
            if index > length:
                raise CorruptPayload("zero run overruns the coefficient sequence")
            continue
        if position >= n:
            raise CorruptPayload("zero run without a level")
        code = data[position]
        position += 1
        if code == _LEVEL_ESCAPE:
            if position + _I16.size > n:
                raise CorruptPayload("escaped level truncated")
            (value,) = _I16.unpack_from(data, position)
            position += _I16.size
        elif code % 2 == 0:
            value = code // 2 + 1
        else:
            value = -(code + 1) // 2
        if index >= length:
            raise CorruptPayload("level overruns the coefficient sequence")
        sequence[index] = value
        index += 1
    return sequence


# --- Codecs ---


class ReferenceCodec(Protocol):
    def encode(self, image: Image, q: int) -> bytes: ...

    def decode(self, data: bytes) -> Image: ...


class TinyCodec:
    """Built-in non-learned block transform codec (codec id 0)."""

    def encode(self, image: Image, q: int) -> bytes:
        if image.width < MIN_SIDE or image.height < MIN_SIDE:
            raise ImageTooSmall(f"reference codec needs at least {MIN_SIDE}x{MIN_SIDE}, got {image.width}x{image.height}")
        if not Q_MIN <= q <= Q_MAX:
            raise ValueError(f"quality {q} outside {Q_MIN}..{Q_MAX}")

        step = quant_step(q)
        keep = ZIGZAG[:kept_coefficients(q)]
        ycc = rgb_to_ycbcr(image.samples * 255.0)
        chunks = [_TINY_HEADER.pack(q, image.width, image.height)]
        for channel in range(3):
            plane = _box_downsample(ycc[..., channel])
            if channel:
                plane = _box_downsample(plane)
            levels = np.round(_forward_blocks(plane)[:, keep] / step).astype(np.int64)
            levels[:, 0] = np.diff(levels[:, 0], prepend=0)
            blob = text_encode(run_level_encode(levels.ravel())).to_bytes()
            chunks.append(_U32.pack(len(blob)) + blob)
        return b"".join(chunks)

    def decode(self, data: bytes) -> Image:
        if len(data) < _TINY_HEADER.size:
            raise CorruptPayload("TINY payload header truncated")
        q, width, height = _TINY_HEADER.unpack_from(data, 0)
        if not Q_MIN <= q <= Q_MAX:
            raise CorruptPayload(f"TINY quality {q} outside {Q_MIN}..{Q_MAX}")
        if width < MIN_SIDE or height < MIN_SIDE or width * height > MAX_PIXELS:
            raise CorruptPayload(f"TINY dimensions {width}x{height} out of range")

        step = quant_step(q)
        keep = ZIGZAG[:kept_coefficients(q)]
        shapes = _plane_shapes(width, height)
        position = _TINY_HEADER.size
        planes = []
        for channel, shape in enumerate(shapes):
            if position + _U32.size > len(data):
                raise CorruptPayload(f"TINY plane {channel} length truncated")
            (blob_len,) = _U32.unpack_from(data, position)
            position += _U32.size
            if position + blob_len > len(data):
                raise CorruptPayload(f"TINY plane {channel} overruns the payload")
            try:
                symbols = text_decode(TextBlob.from_bytes(data[position:position + blob_len]))
            except (TextCodecError, ContainerError) as e:
                raise CorruptPayload(f"TINY plane {channel} entropy stream corrupt: {e}") from e
            position += blob_len

            n_blocks = _n_blocks(shape)
            levels = run_level_decode(symbols, n_blocks * len(keep)).reshape(n_blocks, len(keep))
            levels[:, 0] = np.cumsum(levels[:, 0])
            coefficients = np.zeros((n_blocks, _BLOCK * _BLOCK), dtype=np.float64)
            coefficients[:, keep] = levels * step
            plane = _inverse_blocks(coefficients, shape)
            zoom = 2 if channel == 0 else 4
            plane = ndimage.zoom(plane, zoom, order=1, mode="nearest")
            planes.append(plane[:height, :width])
        if position != len(data):
            raise CorruptPayload(f"{len(data) - position} trailing bytes in TINY payload")

        rgb = ycbcr_to_rgb(np.stack(planes, axis=-1))
        return Image(np.clip(rgb / 255.0, 0.0, 1.0))


REFERENCE_CODECS: dict[int, ReferenceCodec] = {TINY_CODEC_ID: TinyCodec()}


def _codec(codec_id: int, codecs: dict[int, ReferenceCodec] | None) -> ReferenceCodec:
    registry = REFERENCE_CODECS if codecs is None else codecs
    if codec_id not in registry:
        raise UnknownCodec(f"no reference codec registered for id {codec_id}")
    return registry[codec_id]


# --- Public operations ---


def quality_ladder(
    image: Image, q_max: int = Q_MAX, codec_id: int = TINY_CODEC_ID, codecs: dict[int, ReferenceCodec] | None = None
) -> list[RefPayload]:
    """
    Rate-monotone payloads for q = 1..q_max.

    Entry q holds the smallest codec output among qualities 1..q, the finer one on ties,
    so payload size never grows with q. The payload header records the quality actually used.

    Parameters:
        image (Image): Original image, at least 16x16.
        q_max (int, optional): Coarsest quality of the ladder (default: 31).
        codec_id (int, optional): Registered codec id (default: 0, TINY).
        codecs (dict, optional): Codec registry overriding the built-in one.

    Returns:
        list[RefPayload]: q_max payloads, entry i for quality i + 1.
    """
    if not Q_MIN <= q_max <= Q_MAX:
        raise ValueError(f"quality {q_max} outside {Q_MIN}..{Q_MAX}")
    codec = _codec(codec_id, codecs)
    ladder = []
    best = None
    for q in range(Q_MIN, q_max + 1):
        data = codec.encode(image, q)
        if best is None or len(data) < len(best):
            best = data
        ladder.append(RefPayload(codec_id=codec_id, data=best))
    return ladder


def ref_encode(image: Image, q: int, codec_id: int = TINY_CODEC_ID, codecs: dict[int, ReferenceCodec] | None = None) -> RefPayload:
    """
    Compresses the reference image.

    Parameters:
        image (Image): Original image, at least 16x16.
        q (int): Quality parameter 1..31, larger is coarser.
        codec_id (int, optional): Registered codec id (default: 0, TINY).
        codecs (dict, optional): Codec registry overriding the built-in one.

    Returns:
        RefPayload: Codec-tagged payload, never larger than the payload for q - 1.
    """
    return quality_ladder(image, q, codec_id, codecs)[-1]


def ref_decode(payload: RefPayload, codecs: dict[int, ReferenceCodec] | None = None) -> Image:
    """
    Decodes a reference payload to an image of the original dimensions.

    Raises:
        UnknownCodec: If the codec id is not registered.
        CorruptPayload: If the payload cannot be decoded.
    """
    return _codec(payload.codec_id, codecs).decode(payload.data)


def payload_bits(image: Image, q: int, codec_id: int = TINY_CODEC_ID, codecs: dict[int, ReferenceCodec] | None = None) -> int:
    return 8 * len(ref_encode(image, q, codec_id, codecs).data)


def fit_quality(image: Image, budget_bits: int, codec_id: int = TINY_CODEC_ID, codecs: dict[int, ReferenceCodec] | None = None) -> int:
    """
    Finds the finest quality whose payload fits the budget by binary search over the quality ladder.

    The result satisfies payload(q) <= budget_bits < payload(q - 1) (or q == 1).

    Parameters:
        image (Image): Image to compress.
        budget_bits (int): Bits available for the codec bitstream.

    Returns:
        int: Quality parameter q.

    Raises:
        BudgetInfeasible: If even q=31 exceeds the budget (carries the minimum bits).
    """
    sizes = [8 * len(payload.data) for payload in quality_ladder(image, Q_MAX, codec_id, codecs)]

    def size(q: int) -> int:
        return sizes[q - Q_MIN]

    if size(Q_MAX) > budget_bits:
        raise BudgetInfeasible(size(Q_MAX), f"reference needs at least {size(Q_MAX)} bits, budget is {budget_bits}")
    if size(Q_MIN) <= budget_bits:
        return Q_MIN

    failing, fitting = Q_MIN, Q_MAX
    while fitting - failing > 1:
        middle = (failing + fitting) // 2
        if size(middle) <= budget_bits:
            fitting = middle
        else:
            failing = middle
    logging.info(f"Reference quality q={fitting} ({size(fitting)} bits for a budget of {budget_bits})")
    return fitting
