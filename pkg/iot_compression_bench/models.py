import math
import platform as _platform
from enum import Enum
from fractions import Fraction
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_serializer, field_validator, model_validator

from iot_compression_bench.constants import (
    BYTES_PER_READING,
    DEFAULT_BATCH_SIZES,
    DEFAULT_CODEC,
    DEFAULT_CONNECT_DELAY,
    DEFAULT_CONNECT_RETRIES,
    DEFAULT_INSTRUCTIONS_PER_BYTE,
    DEFAULT_MAX_FRAME_SIZE,
    DEFAULT_QUEUE_CAPACITY,
    DEFAULT_RATE_BITS_PER_S,
    DEFAULT_REPETITIONS,
    DEFAULT_SEED,
    DEFAULT_SEND_TIMEOUT,
    DEFAULT_TUPLES,
    DEFAULT_TX_COST_PER_BIT,
    FLAG_COMPRESSED,
    FRAME_HEADER_SIZE,
    THROUGHPUT_FLOOR_BITS,
    REDD_START_TIMESTAMP,
    STRICT_THROUGHPUT_FLOOR_BITS,
)

UINT64_MAX = (1 << 64) - 1


def units_to_json(value: Optional[Fraction]):
    if value is None:
        return None
    return value.numerator if value.denominator == 1 else str(value)


def units_from_json(value):
    if value is None or isinstance(value, Fraction):
        return value
    if isinstance(value, (int, float, str)) and not isinstance(value, bool):
        return Fraction(value)
    raise ValueError(f"expected a rational number, got {value!r}")


class Reading(BaseModel):
    """
    One REDD tuple.

    Attributes:
        timestamp (int): Seconds since the epoch, unsigned 64-bit.
        power (float): Appliance power in watts; NaN and infinities are rejected.
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    timestamp: int = Field(ge=0, le=UINT64_MAX)
    power: float


class Batch(BaseModel):
    """
    A fixed-count run of readings, sent as one message.

    Attributes:
        readings (Tuple[Reading, ...]): Readings in source order; at least one.
    """
    model_config = ConfigDict(frozen=True)

    readings: Tuple[Reading, ...] = Field(min_length=1)

    @property
    def size(self) -> int:
        return len(self.readings)

    @property
    def raw_length(self) -> int:
        return BYTES_PER_READING * len(self.readings)


class ApplianceProfile(BaseModel):
    """
    Parameters of the synthetic appliance used in place of the REDD files.

    The generator holds a power state for a geometrically distributed number
    of seconds (mean ``mean_dwell``) before jumping to another state.

    Attributes:
        name (str): Label recorded in reports.
        states (List[float]): Power levels in watts.
        mean_dwell (float): Mean seconds spent in a state before switching.
        start_timestamp (int): Timestamp of the first reading.
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    name: str = "refrigerator"
    states: List[float] = Field(default_factory=lambda: [0.0, 6.0, 121.0, 245.0, 412.0], min_length=1)
    mean_dwell: float = Field(default=60.0, ge=1.0)
    start_timestamp: int = Field(default=REDD_START_TIMESTAMP, ge=0, le=UINT64_MAX)


class LinkKind(str, Enum):
    TCP = "tcp"
    INPROC = "inproc"


class LinkSpec(BaseModel):
    """
    Description of the sensor-to-sink link.

    Attributes:
        kind (LinkKind): ``tcp`` stream sockets or the ``inproc`` emulated wire.
        address (str): ``host:port`` for tcp, channel name for inproc.
        rate_bits_per_s (int): Throttle rate, 100 Mbit/s by default.
        send_queue_capacity (int): Frames the push side may hold before ``send`` blocks.
        max_frame_size (int): Largest accepted value of the frame length field.
        send_timeout (float): Seconds ``send`` may block on a full queue.
        connect_retries (int): Connection attempts before giving up.
        connect_delay (float): Seconds between connection attempts.
    """
    model_config = ConfigDict(frozen=True)

    kind: LinkKind = LinkKind.INPROC
    address: str = "sink"
    rate_bits_per_s: int = Field(default=DEFAULT_RATE_BITS_PER_S, gt=0)
    send_queue_capacity: int = Field(default=DEFAULT_QUEUE_CAPACITY, ge=1)
    max_frame_size: int = Field(default=DEFAULT_MAX_FRAME_SIZE, ge=1, le=(1 << 32) - 1)
    send_timeout: float = Field(default=DEFAULT_SEND_TIMEOUT, gt=0)
    connect_retries: int = Field(default=DEFAULT_CONNECT_RETRIES, ge=1)
    connect_delay: float = Field(default=DEFAULT_CONNECT_DELAY, ge=0)

    @model_validator(mode="after")
    def _check_address(self):
        if self.kind is LinkKind.TCP:
            host, sep, port = self.address.rpartition(":")
            if not sep or not host or not port.isdigit() or int(port) > 65535:
                raise ValueError(f"tcp address must be host:port, got {self.address!r}")
        elif not self.address:
            raise ValueError("inproc channel name must not be empty")
        return self

    @property
    def host(self) -> str:
        return self.address.rpartition(":")[0]

    @property
    def port(self) -> int:
        return int(self.address.rpartition(":")[2])


class Frame(BaseModel):
    """
    One wire message: ``[u32 LE length][u8 flags][payload]``.

    Attributes:
        flags (int): Bit 0 marks a compressed payload; bits 1-7 must be zero.
        payload (bytes): Message body.
    """
    model_config = ConfigDict(frozen=True)

    flags: int = Field(default=0, ge=0, le=FLAG_COMPRESSED)
    payload: bytes = b""

    @property
    def compressed(self) -> bool:
        return bool(self.flags & FLAG_COMPRESSED)

    @property
    def length(self) -> int:
        return 1 + len(self.payload)

    @property
    def wire_size(self) -> int:
        return FRAME_HEADER_SIZE + len(self.payload)


class CodecStats(BaseModel):
    """
    Best-of-N timing of one codec over one input.

    Attributes:
        codec (str): Codec name.
        input_bytes (int): Uncompressed size.
        output_bytes (int): Compressed size.
        elapsed (float): Best wall time in seconds over the repetitions.
        ratio (float): input_bytes / output_bytes, 0 when undefined.
        ratio_defined (bool): False for empty input.
        repetitions (int): Number of timed runs.
    """
    codec: str
    input_bytes: int = Field(ge=0)
    output_bytes: int = Field(ge=0)
    elapsed: float = Field(ge=0)
    ratio: float = Field(ge=0)
    ratio_defined: bool = True
    repetitions: int = Field(default=1, ge=1)

    @property
    def throughput_bits_per_s(self) -> float:
        if self.elapsed == 0:
            return math.inf if self.input_bytes else 0.0
        return 8 * self.input_bytes / self.elapsed

    @property
    def meets_throughput_floor(self) -> bool:
        return self.throughput_bits_per_s >= THROUGHPUT_FLOOR_BITS

    @property
    def meets_strict_floor(self) -> bool:
        return self.throughput_bits_per_s >= STRICT_THROUGHPUT_FLOOR_BITS


class Mode(str, Enum):
    """The three measured times of the experiment."""
    COMPRESS_AND_TRANSMIT = "compress_and_transmit"
    PRECOMPRESSED_TRANSMIT = "precompressed_transmit"
    RAW_TRANSMIT = "raw_transmit"


ALL_MODES = (Mode.COMPRESS_AND_TRANSMIT, Mode.PRECOMPRESSED_TRANSMIT, Mode.RAW_TRANSMIT)


class TimingSample(BaseModel):
    """
    One cell of the sweep: a mode run over the whole dataset at one batch size.

    Attributes:
        mode (Mode): Which work is inside the timing window.
        batch_size (int): Readings per message.
        batches (int): Messages sent.
        elapsed (float): Median window duration in seconds.
        elapsed_min (float): Fastest repetition.
        elapsed_max (float): Slowest repetition.
        repetitions (int): Timed repetitions behind the median.
        raw_bytes (int): Serialized bytes of all readings sent.
        wire_bytes (int): Bytes on the wire, framing included.
        net_savings_units (Optional[Fraction]): Energy annotation, see energy_model.
        worthwhile (Optional[bool]): Energy annotation, see energy_model.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mode: Mode
    batch_size: int = Field(ge=1)
    batches: int = Field(ge=0)
    elapsed: float = Field(ge=0)
    elapsed_min: Optional[float] = Field(default=None, ge=0)
    elapsed_max: Optional[float] = Field(default=None, ge=0)
    repetitions: int = Field(default=1, ge=1)
    raw_bytes: int = Field(ge=0)
    wire_bytes: int = Field(ge=0)
    net_savings_units: Optional[Fraction] = None
    worthwhile: Optional[bool] = None

    @field_validator("net_savings_units", mode="before")
    @classmethod
    def _load_units(cls, value):
        return units_from_json(value)

    @field_serializer("net_savings_units")
    def _dump_units(self, value: Optional[Fraction]):
        return units_to_json(value)

    @model_validator(mode="after")
    def _check_bytes(self):
        if self.wire_bytes < self.batches * FRAME_HEADER_SIZE:
            raise ValueError("wire_bytes must cover the framing overhead of every batch")
        if self.raw_bytes != self.batches * self.batch_size * BYTES_PER_READING:
            raise ValueError("raw_bytes must equal 16 * batch_size * batches")
        if self.mode is Mode.RAW_TRANSMIT and self.wire_bytes != self.batches * (
            FRAME_HEADER_SIZE + BYTES_PER_READING * self.batch_size
        ):
            raise ValueError("raw_transmit wire_bytes must equal batches * (5 + 16 * batch_size)")
        return self

    @computed_field
    @property
    def payload_bytes(self) -> int:
        return self.wire_bytes - FRAME_HEADER_SIZE * self.batches

    @computed_field
    @property
    def compression_ratio(self) -> float:
        if self.payload_bytes == 0:
            return 0.0
        return self.raw_bytes / self.payload_bytes


class EnvironmentInfo(BaseModel):
    """
    Machine and link descriptors recorded with every report.
    """
    link_kind: LinkKind
    rate_bits_per_s: int
    batch_sizes: List[int]
    repetitions: int
    codec: str
    tuples: int
    pipelined: bool = False
    python_version: str = Field(default_factory=_platform.python_version)
    platform: str = Field(default_factory=_platform.platform)
    machine: str = Field(default_factory=_platform.machine)


class SweepReport(BaseModel):
    """
    Rows of a sweep over modes x batch sizes, ordered by batch size
    descending, then by mode.
    """
    rows: List[TimingSample] = Field(default_factory=list)
    environment: Optional[EnvironmentInfo] = None

    @field_validator("rows")
    @classmethod
    def _one_row_per_cell(cls, rows: List[TimingSample]) -> List[TimingSample]:
        cells = [(row.mode, row.batch_size) for row in rows]
        if len(cells) != len(set(cells)):
            raise ValueError("duplicate (mode, batch_size) row")
        return rows

    @property
    def annotated(self) -> bool:
        return bool(self.rows) and all(row.worthwhile is not None for row in self.rows)

    def row(self, mode: Mode, batch_size: int) -> Optional[TimingSample]:
        for candidate in self.rows:
            if candidate.mode is mode and candidate.batch_size == batch_size:
                return candidate
        return None


class EnergyParams(BaseModel):
    """
    Inputs of the transmit-versus-compute energy model.

    Attributes:
        tx_cost_per_bit (float): Energy of sending one bit, in instruction-energy units.
        instructions_per_byte (float): Instructions spent compressing one input byte.
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    tx_cost_per_bit: float = Field(default=DEFAULT_TX_COST_PER_BIT, gt=0)
    instructions_per_byte: float = Field(default=DEFAULT_INSTRUCTIONS_PER_BYTE, gt=0)


class EnergyEstimate(BaseModel):
    """
    Modelled energy of sending a block raw versus compressed.

    Attributes:
        raw_tx_units (Fraction): Transmit cost of the uncompressed block.
        tx_units (Fraction): Transmit cost of the compressed block.
        compute_units (Fraction): Compression cost.
        net_savings_units (Fraction): raw_tx_units - tx_units - compute_units; may be negative.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    raw_tx_units: Fraction
    tx_units: Fraction
    compute_units: Fraction
    net_savings_units: Fraction

    @field_validator("raw_tx_units", "tx_units", "compute_units", "net_savings_units", mode="before")
    @classmethod
    def _load_units(cls, value):
        return units_from_json(value)

    @field_serializer("raw_tx_units", "tx_units", "compute_units", "net_savings_units")
    def _dump_units(self, value: Fraction):
        return units_to_json(value)


class DatasetSpec(BaseModel):
    """
    Where the readings come from: a REDD text file or the synthetic generator.

    Attributes:
        path (Optional[str]): REDD ``channel_N.dat`` path; overrides the generator when set.
        seed (int): Generator seed.
        tuples (int): Number of generated readings.
        profile (ApplianceProfile): Generator appliance profile.
    """
    path: Optional[str] = None
    seed: int = DEFAULT_SEED
    tuples: int = Field(default=DEFAULT_TUPLES, ge=1)
    profile: ApplianceProfile = Field(default_factory=ApplianceProfile)


class RunConfig(BaseModel):
    """
    Everything needed to reproduce a run; written next to every report.
    """
    subcommand: Literal["compress", "decompress", "gen", "bench", "serve"] = "bench"
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    batch_sizes: List[int] = Field(default_factory=lambda: list(DEFAULT_BATCH_SIZES), min_length=1)
    modes: List[Mode] = Field(default_factory=lambda: list(ALL_MODES), min_length=1)
    link: LinkSpec = Field(default_factory=LinkSpec)
    remote: bool = False
    control_addr: Optional[str] = None
    repetitions: int = Field(default=DEFAULT_REPETITIONS, ge=1)
    codec: str = DEFAULT_CODEC
    pipelined: bool = False
    energy: EnergyParams = Field(default_factory=EnergyParams)
    in_path: Optional[str] = None
    out: Optional[str] = None
    format: Literal["csv", "json"] = "csv"

    @field_validator("batch_sizes")
    @classmethod
    def _positive_sizes(cls, sizes: List[int]) -> List[int]:
        if any(size < 1 for size in sizes):
            raise ValueError("batch sizes must be >= 1")
        if len(set(sizes)) != len(sizes):
            raise ValueError("batch sizes must be distinct")
        return sizes


class SinkStats(BaseModel):
    """
    What a sink has received since its last reset.

    Attributes:
        frames (int): Frames received.
        bytes (int): Wire bytes received, framing included.
        raw_bytes (int): Bytes after decompressing flagged payloads.
        digest (str): BLAKE2b hex digest of the reconstructed raw stream, in arrival order.
        errors (int): Frames whose payload failed to decompress.
    """
    frames: int = 0
    bytes: int = 0
    raw_bytes: int = 0
    digest: str = ""
    errors: int = 0
