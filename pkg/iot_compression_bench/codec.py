"""
Snappy raw block format codec.

A block is the varint-encoded uncompressed length followed by elements.
The low two bits of each element's tag byte select its kind:

  00 literal  upper 6 bits m: m < 60 means m + 1 literal bytes follow;
              m = 60..63 means the next m - 59 bytes hold (length - 1), LE.
  01 copy-1   length 4 + bits 2-4, offset bits 8-10 in bits 5-7, low
              offset byte follows.
  10 copy-2   length 1 + upper 6 bits, u16 LE offset follows.
  11 copy-4   length 1 + upper 6 bits, u32 LE offset follows.

Input is compressed in independent 64 KiB fragments, so emitted offsets
always fit copy-1 or copy-2; copy-4 is only ever decoded.
"""
import struct
import time
from typing import Dict, List, Protocol, Tuple, runtime_checkable

from iot_compression_bench.constants import (
    BLOCK_SIZE,
    DEFAULT_CODEC,
    HASH_TABLE_SIZE,
    INPUT_MARGIN_BYTES,
    MAX_BLOCK_LENGTH,
    PURE_CODEC,
    TAG_COPY_1,
    TAG_COPY_2,
    TAG_LITERAL,
)
from iot_compression_bench.custom_logger import get_logger
from iot_compression_bench.exceptions import (
    CorruptionError,
    InputTooLargeError,
    LengthMismatchError,
    OffsetOutOfRangeError,
    TruncatedInputError,
    ValidationError,
)
from iot_compression_bench.models import CodecStats

logger = get_logger(__name__)

_HASH_SHIFT = 32 - (HASH_TABLE_SIZE.bit_length() - 1)
_HASH_MUL = 0x1E35A7BD
_load32 = struct.Struct("<I").unpack_from


def encode_uvarint(value: int) -> bytes:
    """Base-128 little-endian varint."""
    if value < 0:
        raise ValidationError(f"varint value must be non-negative, got {value}")
    out = bytearray()
    while value >= 0x80:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    out.append(value)
    return bytes(out)


def decode_uvarint(buf: bytes, pos: int = 0, max_bytes: int = 10) -> Tuple[int, int]:
    """
    Decodes a varint starting at ``pos``.

    Returns:
        Tuple[int, int]: The value and the position just past it.

    Raises:
        TruncatedInputError: If the buffer ends inside the varint.
        CorruptionError: If the varint is longer than ``max_bytes``.
    """
    result = 0
    shift = 0
    for _ in range(max_bytes):
        if pos >= len(buf):
            raise TruncatedInputError("varint runs past the end of the input")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if byte < 0x80:
            return result, pos
        shift += 7
    raise CorruptionError(f"varint longer than {max_bytes} bytes")


def max_compressed_length(n: int) -> int:
    """Worst-case size of a compressed block for ``n`` input bytes."""
    if n < 0:
        raise ValidationError(f"length must be non-negative, got {n}")
    return 32 + n + n // 6


def decompressed_length(block: bytes) -> int:
    """Reads the uncompressed length from the block preamble."""
    return _read_preamble(block)[0]


def _read_preamble(block: bytes) -> Tuple[int, int]:
    length, pos = decode_uvarint(block, 0, max_bytes=5)
    if length > MAX_BLOCK_LENGTH:
        raise CorruptionError(f"preamble declares {length} bytes, above the 32-bit cap")
    return length, pos


def _hash(value: int) -> int:
    return ((value * _HASH_MUL) & 0xFFFFFFFF) >> _HASH_SHIFT


def _emit_literal(out: bytearray, src: bytes, begin: int, end: int) -> None:
    n = end - begin - 1
    if n < 60:
        out.append((n << 2) | TAG_LITERAL)
    else:
        count = (n.bit_length() + 7) // 8
        out.append(((59 + count) << 2) | TAG_LITERAL)
        out += n.to_bytes(count, "little")
    out += src[begin:end]


def _emit_copy_at_most_64(out: bytearray, offset: int, length: int) -> None:
    if length < 12 and offset < 2048:
        out.append(((offset >> 8) << 5) | ((length - 4) << 2) | TAG_COPY_1)
        out.append(offset & 0xFF)
    else:
        out.append(((length - 1) << 2) | TAG_COPY_2)
        out.append(offset & 0xFF)
        out.append(offset >> 8)


def _emit_copy(out: bytearray, offset: int, length: int) -> None:
    # Every emitted piece keeps length >= 4 so copy-1 stays usable.
    while length >= 68:
        _emit_copy_at_most_64(out, offset, 64)
        length -= 64
    if length > 64:
        _emit_copy_at_most_64(out, offset, 60)
        length -= 60
    _emit_copy_at_most_64(out, offset, length)


def _match_length(src: bytes, a: int, b: int, limit: int) -> int:
    """Number of equal bytes at ``src[a:]`` and ``src[b:]``, with b < limit."""
    n = 0
    remaining = limit - b
    step = 8
    while n < remaining:
        k = min(step, remaining - n)
        if src[a + n:a + n + k] == src[b + n:b + n + k]:
            n += k
            step = min(step << 1, 4096)
        elif k == 1:
            break
        else:
            step = k >> 1
    return n


def _compress_body(src: bytes, start: int, end: int, out: bytearray) -> int:
    """Emits elements for ``src[start:end]``; returns where pending literals begin."""
    table = [0] * HASH_TABLE_SIZE
    ip_limit = end - INPUT_MARGIN_BYTES
    next_emit = start
    ip = start + 1
    next_hash = _hash(_load32(src, ip)[0])
    while True:
        # Skip ahead faster the longer no match has been found.
        skip = 32
        next_ip = ip
        while True:
            ip = next_ip
            h = next_hash
            next_ip = ip + (skip >> 5)
            skip += 1
            if next_ip > ip_limit:
                return next_emit
            next_hash = _hash(_load32(src, next_ip)[0])
            candidate = start + table[h]
            table[h] = ip - start
            if _load32(src, ip)[0] == _load32(src, candidate)[0]:
                break

        _emit_literal(out, src, next_emit, ip)
        while True:
            matched = 4 + _match_length(src, candidate + 4, ip + 4, end)
            _emit_copy(out, ip - candidate, matched)
            ip += matched
            next_emit = ip
            if ip >= ip_limit:
                return next_emit
            table[_hash(_load32(src, ip - 1)[0])] = ip - 1 - start
            h = _hash(_load32(src, ip)[0])
            candidate = start + table[h]
            table[h] = ip - start
            if _load32(src, ip)[0] != _load32(src, candidate)[0]:
                break

        ip += 1
        next_hash = _hash(_load32(src, ip)[0])


def compress(raw: bytes) -> bytes:
    """
    Compresses ``raw`` into a Snappy raw block.

    Args:
        raw (bytes): Input, at most 2**32 - 1 bytes.

    Returns:
        bytes: The block; deterministic for a given input.

    Raises:
        InputTooLargeError: If the input exceeds the 32-bit length cap.
    """
    n = len(raw)
    if n > MAX_BLOCK_LENGTH:
        raise InputTooLargeError(f"input of {n} bytes exceeds {MAX_BLOCK_LENGTH}")
    src = bytes(raw)
    out = bytearray(encode_uvarint(n))
    for start in range(0, n, BLOCK_SIZE):
        end = min(start + BLOCK_SIZE, n)
        next_emit = start
        if end - start >= INPUT_MARGIN_BYTES:
            next_emit = _compress_body(src, start, end, out)
        if next_emit < end:
            _emit_literal(out, src, next_emit, end)
    return bytes(out)


def decompress(block: bytes) -> bytes:
    """
    Decompresses a Snappy raw block.

    Raises:
        TruncatedInputError: The block ends inside an element.
        OffsetOutOfRangeError: A copy reaches before the start of the output.
        LengthMismatchError: The content disagrees with the preamble.
        CorruptionError: The preamble itself is invalid.
    """
    src = block if isinstance(block, bytes) else bytes(block)
    length, pos = _read_preamble(src)
    end = len(src)
    out = bytearray()
    while pos < end:
        tag = src[pos]
        pos += 1
        kind = tag & 0x03
        if kind == TAG_LITERAL:
            n = tag >> 2
            if n >= 60:
                extra = n - 59
                if pos + extra > end:
                    raise TruncatedInputError("literal length runs past the end of the input")
                n = int.from_bytes(src[pos:pos + extra], "little")
                pos += extra
            n += 1
            if pos + n > end:
                raise TruncatedInputError(f"literal of {n} bytes runs past the end of the input")
            if len(out) + n > length:
                raise LengthMismatchError(f"literal overruns the declared length of {length}")
            out += src[pos:pos + n]
            pos += n
            continue

        if kind == TAG_COPY_1:
            if pos + 1 > end:
                raise TruncatedInputError("copy-1 offset runs past the end of the input")
            n = 4 + ((tag >> 2) & 0x07)
            offset = ((tag >> 5) << 8) | src[pos]
            pos += 1
        elif kind == TAG_COPY_2:
            if pos + 2 > end:
                raise TruncatedInputError("copy-2 offset runs past the end of the input")
            n = 1 + (tag >> 2)
            offset = src[pos] | (src[pos + 1] << 8)
            pos += 2
        else:
            if pos + 4 > end:
                raise TruncatedInputError("copy-4 offset runs past the end of the input")
            n = 1 + (tag >> 2)
            offset = int.from_bytes(src[pos:pos + 4], "little")
            pos += 4

        produced = len(out)
        if offset == 0 or offset > produced:
            raise OffsetOutOfRangeError(f"copy offset {offset} with {produced} bytes produced")
        if produced + n > length:
            raise LengthMismatchError(f"copy overruns the declared length of {length}")
        begin = produced - offset
        if offset >= n:
            out += out[begin:begin + n]
        else:
            # Overlapping copy repeats the last `offset` bytes.
            out += (out[begin:produced] * (n // offset + 1))[:n]

    if len(out) != length:
        raise LengthMismatchError(f"decoded {len(out)} bytes, preamble declares {length}")
    return bytes(out)


@runtime_checkable
class Codec(Protocol):
    """Anything with a name and a lossless compress/decompress pair."""
    name: str

    def compress(self, raw: bytes) -> bytes:
        ...

    def decompress(self, block: bytes) -> bytes:
        ...


class SnappyCodec:
    """The block codec implemented in this module."""
    name = PURE_CODEC

    def compress(self, raw: bytes) -> bytes:
        return compress(raw)

    def decompress(self, block: bytes) -> bytes:
        return decompress(block)


class CramjamSnappyCodec:
    """
    Snappy raw blocks via cramjam's native implementation.

    Serves as the independent reference decoder in interop tests and as the
    native-speed comparison point in benchmarks.
    """
    name = "snappy-cramjam"

    def __init__(self):
        import cramjam
        self._snappy = cramjam.snappy
        self._errors = (cramjam.DecompressionError,)

    def compress(self, raw: bytes) -> bytes:
        if len(raw) > MAX_BLOCK_LENGTH:
            raise InputTooLargeError(f"input of {len(raw)} bytes exceeds {MAX_BLOCK_LENGTH}")
        return bytes(self._snappy.compress_raw(bytes(raw)))

    def decompress(self, block: bytes) -> bytes:
        try:
            return bytes(self._snappy.decompress_raw(bytes(block)))
        except self._errors as e:
            raise CorruptionError(f"reference decoder rejected block: {e}") from e


_CODECS: Dict[str, Codec] = {}


def register_codec(codec: Codec) -> None:
    """Makes ``codec`` available to the harness and CLI under ``codec.name``."""
    if not isinstance(codec, Codec):
        raise ValidationError(f"{codec!r} does not implement name/compress/decompress")
    _CODECS[codec.name] = codec


def get_codec(name: str) -> Codec:
    try:
        return _CODECS[name]
    except KeyError:
        raise ValidationError(f"unknown codec {name!r}; available: {', '.join(available_codecs())}") from None


def available_codecs() -> List[str]:
    return sorted(_CODECS)


def default_codec() -> Codec:
    """The native-backed codec, or the pure block codec when cramjam is missing."""
    if DEFAULT_CODEC in _CODECS:
        return _CODECS[DEFAULT_CODEC]
    logger.warning(f"{DEFAULT_CODEC} unavailable; falling back to the pure {PURE_CODEC} codec")
    return _CODECS[PURE_CODEC]


def codec_throughput(raw: bytes, repetitions: int = 5, codec: Codec | None = None) -> CodecStats:
    """
    Times compression of ``raw`` and keeps the best of ``repetitions`` runs.

    An empty input has no defined ratio; it is reported as 0 with
    ``ratio_defined`` False.
    """
    if repetitions < 1:
        raise ValidationError(f"repetitions must be >= 1, got {repetitions}")
    codec = codec or default_codec()
    best = float("inf")
    block = b""
    for _ in range(repetitions):
        started = time.perf_counter()
        block = codec.compress(raw)
        best = min(best, time.perf_counter() - started)
    defined = len(raw) > 0
    stats = CodecStats(
        codec=codec.name,
        input_bytes=len(raw),
        output_bytes=len(block),
        elapsed=best,
        ratio=len(raw) / len(block) if defined else 0.0,
        ratio_defined=defined,
        repetitions=repetitions,
    )
    logger.debug(
        f"{codec.name}: {stats.input_bytes} -> {stats.output_bytes} bytes, "
        f"{stats.throughput_bits_per_s / 1e6:.1f} Mbit/s"
    )
    return stats


register_codec(SnappyCodec())
try:
    register_codec(CramjamSnappyCodec())
except ImportError:
    logger.debug("cramjam not installed; snappy-cramjam codec unavailable")
