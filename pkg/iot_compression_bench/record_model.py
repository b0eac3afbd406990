import hashlib
import math
import random
import re
import struct
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

from pydantic import ValidationError as PydanticValidationError

from iot_compression_bench.constants import BYTES_PER_READING
from iot_compression_bench.custom_logger import get_logger
from iot_compression_bench.exceptions import FramingError, ParseError, ValidationError
from iot_compression_bench.models import UINT64_MAX, ApplianceProfile, Batch, Reading

logger = get_logger(__name__)

READING_STRUCT = struct.Struct("<Qd")

# <decimal-integer> <whitespace> <decimal-number>
_LINE_RE = re.compile(
    r"^\s*(?P<ts>\d+)\s+(?P<power>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?(?:nan|inf|infinity))\s*$",
    re.IGNORECASE,
)


def parse_redd_line(line: str, line_number: Optional[int] = None) -> Reading:
    """
    Parses one line of a REDD low-frequency ``channel_N.dat`` file.

    Args:
        line (str): ``<timestamp> <power>``.
        line_number (int, optional): Position in the source, reported on errors.

    Returns:
        Reading: The parsed reading.

    Raises:
        ParseError: If the line is malformed or the power is NaN/Inf.
    """
    match = _LINE_RE.match(line)
    if match is None:
        raise ParseError(f"expected '<timestamp> <power>', got {line.rstrip()!r}", line_number)
    power = float(match.group("power"))
    if not math.isfinite(power):
        raise ParseError(f"power must be finite, got {match.group('power')!r}", line_number)
    try:
        return Reading(timestamp=int(match.group("ts")), power=power)
    except PydanticValidationError as e:
        raise ParseError(str(e.errors()[0]["msg"]), line_number) from e


def format_redd_line(reading: Reading) -> str:
    return f"{reading.timestamp} {reading.power!r}\n"


def serialize_batch(batch: Batch) -> bytes:
    """
    Lays out a batch as 16 bytes per reading: u64 LE timestamp then f64 LE power.
    """
    buf = bytearray(BYTES_PER_READING * len(batch.readings))
    pack_into = READING_STRUCT.pack_into
    for index, reading in enumerate(batch.readings):
        pack_into(buf, index * BYTES_PER_READING, reading.timestamp, reading.power)
    return bytes(buf)


def deserialize_batch(raw: bytes, n: int) -> Batch:
    """
    Inverse of :func:`serialize_batch`.

    Raises:
        FramingError: If ``len(raw) != 16 * n``.
        ValidationError: If a decoded power is NaN or infinite.
    """
    if n < 1 or len(raw) != BYTES_PER_READING * n:
        raise FramingError(f"expected {BYTES_PER_READING * n} bytes for {n} readings, got {len(raw)}")
    try:
        readings = tuple(
            Reading(timestamp=ts, power=power) for ts, power in READING_STRUCT.iter_unpack(raw)
        )
    except PydanticValidationError as e:
        raise ValidationError(f"decoded reading is invalid: {e.errors()[0]['msg']}") from e
    return Batch(readings=readings)


def digest_readings(readings: Iterable[Reading]) -> str:
    """BLAKE2b digest of the serialized reading sequence."""
    h = hashlib.blake2b(digest_size=16)
    for reading in readings:
        h.update(READING_STRUCT.pack(reading.timestamp, reading.power))
    return h.hexdigest()


def _synthesize(seed: int, n: int, profile: ApplianceProfile) -> List[Reading]:
    rng = random.Random(seed)
    states = profile.states
    switch_probability = 1.0 / profile.mean_dwell
    state = rng.randrange(len(states))
    readings = []
    for i in range(n):
        if len(states) > 1 and rng.random() < switch_probability:
            state = (state + rng.randrange(1, len(states))) % len(states)
        readings.append(Reading.model_construct(timestamp=profile.start_timestamp + i, power=states[state]))
    return readings


def _read_lines(path: Path) -> Iterator[Tuple[int, str]]:
    """Yields (line_number, text) for every non-blank line of an ASCII file."""
    with path.open("rb") as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode("ascii")
            except UnicodeDecodeError as e:
                raise ParseError(f"non-ASCII byte at column {e.start + 1}", line_number) from None
            if line.strip():
                yield line_number, line


class Dataset:
    """
    An ordered source of readings: a REDD text file or the synthetic generator.

    Iteration yields exactly ``total_tuples`` readings in source order. Each
    call to ``iter`` starts a new pass; a single iterator is single-consumer.

    Attributes:
        source (str): File path or generator description.
        total_tuples (int): Number of readings a full pass yields.
    """

    def __init__(self, source: str, total_tuples: int, readings: Optional[Sequence[Reading]] = None,
                 path: Optional[Path] = None):
        self.source = source
        self.total_tuples = total_tuples
        self._readings = readings
        self._path = path

    @classmethod
    def from_file(cls, path: str | Path) -> "Dataset":
        """
        Opens a REDD file, counting its readings.

        Raises:
            FileNotFoundError: If ``path`` is not a file.
            ParseError: On a non-ASCII byte, with its line number. Malformed
                lines surface on iteration.
        """
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"REDD file not found: {path}")
        total = sum(1 for _ in _read_lines(path))
        logger.info(f"Dataset {path}: {total} readings")
        return cls(source=str(path), total_tuples=total, path=path)

    @classmethod
    def from_readings(cls, readings: Sequence[Reading], source: str = "memory") -> "Dataset":
        return cls(source=source, total_tuples=len(readings), readings=list(readings))

    @classmethod
    def synthetic(cls, seed: int, n: int, profile: Optional[ApplianceProfile] = None) -> "Dataset":
        return generate_synthetic(seed, n, profile)

    def __iter__(self) -> Iterator[Reading]:
        if self._readings is not None:
            yield from self._readings
            return
        for line_number, line in _read_lines(self._path):
            yield parse_redd_line(line, line_number)

    def __len__(self) -> int:
        return self.total_tuples

    def readings(self) -> List[Reading]:
        """Materializes the whole dataset; positioned parse errors propagate."""
        if self._readings is None:
            self._readings = list(iter(self))
        return list(self._readings)

    def batches(self, batch_size: int) -> List[Batch]:
        """
        Splits the dataset into full batches of ``batch_size`` readings.

        The trailing partial batch, if any, is dropped so every message carries
        the same number of readings.
        """
        if batch_size < 1:
            raise ValidationError(f"batch size must be >= 1, got {batch_size}")
        readings = self.readings()
        full = len(readings) // batch_size
        if full == 0:
            raise ValidationError(
                f"dataset has {len(readings)} readings, fewer than one batch of {batch_size}"
            )
        dropped = len(readings) - full * batch_size
        if dropped:
            logger.warning(f"Dropping {dropped} trailing readings that do not fill a batch of {batch_size}")
        return [
            Batch(readings=tuple(readings[i * batch_size:(i + 1) * batch_size]))
            for i in range(full)
        ]

    def __repr__(self) -> str:
        return f"Dataset(source={self.source!r}, total_tuples={self.total_tuples})"


def generate_synthetic(seed: int, n: int, profile: Optional[ApplianceProfile] = None) -> Dataset:
    """
    Generates a deterministic REDD-like dataset.

    Timestamps advance by one second per reading; power follows
    piecewise-constant appliance states with geometric dwell times.

    Args:
        seed (int): RNG seed.
        n (int): Number of readings, at least 1.
        profile (ApplianceProfile, optional): Appliance states and dwell.

    Returns:
        Dataset: In-memory dataset of ``n`` readings.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    profile = profile or ApplianceProfile()
    if profile.start_timestamp + n - 1 > UINT64_MAX:
        raise ValidationError("synthetic timestamps would overflow 64 bits")
    readings = _synthesize(seed, n, profile)
    return Dataset(
        source=f"synthetic(seed={seed}, n={n}, profile={profile.name})",
        total_tuples=n,
        readings=readings,
    )


def write_redd(readings: Iterable[Reading], path: str | Path) -> int:
    """Writes readings in the REDD text format. Returns the number written."""
    count = 0
    with Path(path).open("w", encoding="ascii", newline="\n") as f:
        for reading in readings:
            f.write(format_redd_line(reading))
            count += 1
    return count
