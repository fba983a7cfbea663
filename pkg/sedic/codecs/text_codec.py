import heapq
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CorruptBitstream, LengthMismatch, TextCodecError, Truncated


MAX_CODE_LENGTH = 15
_HEADER = struct.Struct("<IH")
_CHUNK_BITS = 1 << 16


# --- Code table ---


@dataclass(frozen=True)
class CodeTable:
    """
    Canonical Huffman code table over the byte alphabet.

    Only (symbol, code_len) pairs are stored; the codes themselves are assigned
    canonically by (code_len asc, symbol asc).

    Raises:
        CorruptBitstream: If the symbols are not strictly ascending, a length is out of
            1..15, or the lengths violate the Kraft inequality.
    """
    entries: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        entries = tuple((int(symbol), int(length)) for symbol, length in self.entries)
        object.__setattr__(self, "entries", entries)

        if len(entries) > 256:
            raise CorruptBitstream(f"code table has {len(entries)} symbols, at most 256 allowed")
        previous = -1
        kraft = 0
        for symbol, length in entries:
            if not 0 <= symbol <= 255 or symbol <= previous:
                raise CorruptBitstream(f"code table symbols must be strictly ascending bytes (got {symbol})")
            if not 1 <= length <= MAX_CODE_LENGTH:
                raise CorruptBitstream(f"code length {length} for symbol {symbol} outside 1..{MAX_CODE_LENGTH}")
            previous = symbol
            kraft += 1 << (MAX_CODE_LENGTH - length)
        if kraft > 1 << MAX_CODE_LENGTH:
            raise CorruptBitstream("code lengths violate the Kraft inequality")

    @property
    def n_symbols(self) -> int:
        return len(self.entries)

    def codes(self) -> dict[int, tuple[int, int]]:
        """
        Assigns the canonical codes.

        Returns:
            dict: symbol -> (code, code_len).
        """
        codes = {}
        code = 0
        previous_length = None
        for symbol, length in sorted(self.entries, key=lambda e: (e[1], e[0])):
            if previous_length is not None:
                code = (code + 1) << (length - previous_length)
            codes[symbol] = (code, length)
            previous_length = length
        return codes

    def to_bytes(self) -> bytes:
        return bytes(value for entry in self.entries for value in entry)


@dataclass(frozen=True)
class TextBlob:
    """
    Entropy-coded text: decoded length, code table and the MSB-first bitstream,
    zero-padded to a byte boundary.
    """
    decoded_len: int
    table: CodeTable
    bits: bytes

    def to_bytes(self) -> bytes:
        """Serializes as decoded_len u32 | n_symbols u16 | (symbol u8, code_len u8)* | bits."""
        return _HEADER.pack(self.decoded_len, self.table.n_symbols) + self.table.to_bytes() + self.bits

    @classmethod
    def from_bytes(cls, data: bytes, base_offset: int = 0) -> "TextBlob":
        """
        Parses a serialized blob. The bitstream runs to the end of `data`.

        Parameters:
            data (bytes): Serialized blob.
            base_offset (int, optional): Offset of `data` inside the enclosing stream, used in errors.

        Returns:
            TextBlob: The parsed blob.

        Raises:
            Truncated: If the header or the table is cut short.
            CorruptBitstream: If the table is invalid.
        """
        if len(data) < _HEADER.size:
            raise Truncated(base_offset + len(data), "text blob header truncated")
        decoded_len, n_symbols = _HEADER.unpack_from(data, 0)
        table_end = _HEADER.size + 2 * n_symbols
        if len(data) < table_end:
            raise Truncated(base_offset + len(data), "text blob code table truncated")
        raw = data[_HEADER.size:table_end]
        table = CodeTable(tuple(zip(raw[0::2], raw[1::2])))
        return cls(decoded_len=decoded_len, table=table, bits=bytes(data[table_end:]))


# --- Code lengths ---


def _huffman_lengths(histogram: dict[int, int]) -> dict[int, int]:
    """Optimal (unlimited) Huffman code lengths, deterministic for a given histogram."""
    if len(histogram) == 1:
        return {symbol: 1 for symbol in histogram}

    lengths = {symbol: 0 for symbol in histogram}
    heap = [(count, symbol, [symbol]) for symbol, count in histogram.items()]
    heapq.heapify(heap)
    node_id = 256
    while len(heap) > 1:
        weight_a, _, symbols_a = heapq.heappop(heap)
        weight_b, _, symbols_b = heapq.heappop(heap)
        for symbol in symbols_a + symbols_b:
            lengths[symbol] += 1
        heapq.heappush(heap, (weight_a + weight_b, node_id, symbols_a + symbols_b))
        node_id += 1
    return lengths


def _package_merge_lengths(histogram: dict[int, int], limit: int) -> dict[int, int]:
    """Optimal code lengths bounded by `limit` (package-merge)."""
    symbols = sorted(histogram, key=lambda s: (histogram[s], s))
    n = len(symbols)
    leaves = []
    for index, symbol in enumerate(symbols):
        members = np.zeros(n, dtype=np.int64)
        members[index] = 1
        leaves.append((histogram[symbol], 0, members))

    current = leaves
    for _ in range(limit - 1):
        packages = [
            (current[i][0] + current[i + 1][0], 1, current[i][2] + current[i + 1][2])
            for i in range(0, len(current) - 1, 2)
        ]
        current = sorted(leaves + packages, key=lambda item: (item[0], item[1]))

    counts = np.sum([item[2] for item in current[: 2 * n - 2]], axis=0)
    return {symbol: int(counts[index]) for index, symbol in enumerate(symbols)}


def build_code_table(data: bytes) -> CodeTable:
    """
    Builds the canonical code table for `data`, limiting code lengths to 15 bits.

    Parameters:
        data (bytes): Text to code.

    Returns:
        CodeTable: Table depending only on the byte histogram of `data`.
    """
    if not data:
        return CodeTable()
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    histogram = {int(symbol): int(counts[symbol]) for symbol in np.flatnonzero(counts)}

    lengths = _huffman_lengths(histogram)
    if max(lengths.values()) > MAX_CODE_LENGTH:
        lengths = _package_merge_lengths(histogram, MAX_CODE_LENGTH)
    return CodeTable(tuple(sorted(lengths.items())))


# --- Encode / Decode ---


def _as_bytes(text: bytes | str) -> bytes:
    return text.encode("utf-8") if isinstance(text, str) else bytes(text)


def text_encode(text: bytes | str) -> TextBlob:
    """
    Losslessly compresses a text with a per-blob canonical Huffman code.

    Parameters:
        text (bytes | str): Byte string (str is encoded as UTF-8).

    Returns:
        TextBlob: The coded text. An empty input gives an empty table and no bits;
            a single distinct symbol uses a 1-bit code.
    """
    data = _as_bytes(text)
    if len(data) >= 1 << 32:
        raise TextCodecError("text longer than 2**32 - 1 bytes")

    table = build_code_table(data)
    if not data:
        return TextBlob(decoded_len=0, table=table, bits=b"")

    code_strings = [""] * 256
    for symbol, (code, length) in table.codes().items():
        code_strings[symbol] = format(code, f"0{length}b")
    bitstring = "".join([code_strings[byte] for byte in data])
    n_bytes = (len(bitstring) + 7) // 8
    bitstring = bitstring.ljust(8 * n_bytes, "0")
    return TextBlob(decoded_len=len(data), table=table, bits=int(bitstring, 2).to_bytes(n_bytes, "big"))


def _decode_lookup(table: CodeTable, width: int) -> tuple[list[int], list[int]]:
    """Lookup over `width`-bit windows: window -> (symbol, code_len), code_len 0 for unassigned prefixes."""
    lut_symbol = np.zeros(1 << width, dtype=np.int64)
    lut_length = np.zeros(1 << width, dtype=np.int64)
    for symbol, (code, length) in table.codes().items():
        start = code << (width - length)
        stop = start + (1 << (width - length))
        lut_symbol[start:stop] = symbol
        lut_length[start:stop] = length
    return lut_symbol.tolist(), lut_length.tolist()


def _windows(data: bytes, start: int, count: int, width: int) -> list[int]:
    """`width`-bit windows at bit offsets start..start+count-1 (start byte-aligned), zeros past the stream end."""
    chunk = np.frombuffer(data[start // 8:(start + count + width + 7) // 8], dtype=np.uint8)
    bits = np.unpackbits(chunk).astype(np.int32)
    bits = np.pad(bits, (0, max(0, count + width - bits.size)))
    windows = np.zeros(count, dtype=np.int32)
    for j in range(width):
        windows = (windows << 1) | bits[j:j + count]
    return windows.tolist()


def text_decode(blob: TextBlob) -> bytes:
    """
    Decodes a TextBlob.

    The bitstream is read in chunks of 64 Kibit, so working memory does not grow with the blob.

    Parameters:
        blob (TextBlob): Structurally valid blob.

    Returns:
        bytes: Exactly `blob.decoded_len` bytes.

    Raises:
        CorruptBitstream: If the prefix walk hits an unassigned code, or padding/trailing bits are not zero.
        LengthMismatch: If the bits cannot hold `decoded_len` symbols, or run out before them.
    """
    n = blob.decoded_len
    if n == 0:
        if blob.bits:
            raise CorruptBitstream("empty text carries a non-empty bitstream")
        return b""
    if blob.table.n_symbols == 0:
        raise CorruptBitstream(f"empty code table for {n} coded bytes")

    n_bits = 8 * len(blob.bits)
    shortest = min(length for _, length in blob.table.entries)
    if n * shortest > n_bits:
        raise LengthMismatch(f"expected {n} symbols of at least {shortest} bits, bitstream holds {n_bits} bits")
    width = max(length for _, length in blob.table.entries)
    lut_symbol, lut_length = _decode_lookup(blob.table, width)

    out = bytearray(n)
    position = 0
    chunk_start = 0
    windows = _windows(blob.bits, chunk_start, _CHUNK_BITS, width)
    for i in range(n):
        if position >= n_bits:
            raise LengthMismatch(f"bitstream exhausted after {i} of {n} symbols")
        if position - chunk_start >= _CHUNK_BITS:
            chunk_start = position - position % 8
            windows = _windows(blob.bits, chunk_start, _CHUNK_BITS, width)
        window = windows[position - chunk_start]
        length = lut_length[window]
        if length == 0:
            raise CorruptBitstream(f"no code matches the bits at bit offset {position}")
        if position + length > n_bits:
            raise LengthMismatch(f"bitstream exhausted after {i} of {n} symbols")
        out[i] = lut_symbol[window]
        position += length

    if len(blob.bits) != (position + 7) // 8:
        raise CorruptBitstream("trailing bytes after the last symbol")
    if position % 8 and blob.bits[-1] & ((1 << (8 - position % 8)) - 1):
        raise CorruptBitstream("non-zero padding after the last symbol")
    return bytes(out)


def estimate_text_bits(text: bytes | str) -> int:
    """
    Exact serialized size of the TextBlob for `text`, in bits (encode-and-measure).

    Parameters:
        text (bytes | str): Text to measure.

    Returns:
        int: 8 * len(text_encode(text).to_bytes()).
    """
    return 8 * len(text_encode(text).to_bytes())
