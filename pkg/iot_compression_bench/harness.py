"""
Timing harness for the three measured times:

  compress_and_transmit    serialize, compress, frame and send inside the window
  precompressed_transmit   blocks compressed beforehand; frame and send only
  raw_transmit             uncompressed blocks; frame and send only

The sensor side is one sequential pipeline by default: the same activity
compresses and sends. ``pipelined=True`` moves compression to a worker
thread feeding the sender. The window opens before the first frame and
closes once the sink has drained the last one and the link pacer is
settled; integrity checks run afterwards.
"""
import asyncio
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Sequence

from iot_compression_bench.codec import Codec, default_codec
from iot_compression_bench.constants import (
    BYTES_PER_READING,
    CSV_ENERGY_HEADER,
    CSV_HEADER,
    FLAG_COMPRESSED,
    REFERENCE_TIMINGS,
)
from iot_compression_bench.custom_logger import get_logger
from iot_compression_bench.exceptions import IntegrityError, TransportError, ValidationError
from iot_compression_bench.models import (
    ALL_MODES,
    Batch,
    EnvironmentInfo,
    Frame,
    LinkSpec,
    Mode,
    SweepReport,
    TimingSample,
)
from iot_compression_bench.record_model import Dataset, serialize_batch
from iot_compression_bench.sink import LocalSink, RemoteSink, raw_stream_digest
from iot_compression_bench.transport import connect_push, throttled_elapsed

logger = get_logger(__name__)

DRAIN_TIMEOUT = 60.0


class Workload:
    """
    The batches of one batch size, with serialized and compressed forms
    computed once and shared by every run.
    """

    def __init__(self, batches: List[Batch], codec: Codec):
        if not batches:
            raise ValidationError("workload needs at least one batch")
        self.batches = batches
        self.codec = codec
        self.batch_size = batches[0].size
        self._raw: Optional[List[bytes]] = None
        self._compressed: Optional[List[bytes]] = None

    @classmethod
    def from_dataset(cls, data: Dataset, batch_size: int, codec: Codec) -> "Workload":
        return cls(data.batches(batch_size), codec)

    @property
    def raw_blocks(self) -> List[bytes]:
        if self._raw is None:
            self._raw = [serialize_batch(batch) for batch in self.batches]
        return self._raw

    @property
    def compressed_blocks(self) -> List[bytes]:
        if self._compressed is None:
            self._compressed = [self.codec.compress(block) for block in self.raw_blocks]
        return self._compressed

    @property
    def raw_bytes(self) -> int:
        return len(self.batches) * self.batch_size * BYTES_PER_READING

    @property
    def source_digest(self) -> str:
        return raw_stream_digest(self.raw_blocks)

    def prepare(self, mode: Mode) -> None:
        """Does the work that belongs before the window for ``mode``."""
        if mode is Mode.PRECOMPRESSED_TRANSMIT:
            self.compressed_blocks
        else:
            self.raw_blocks


def _compress_batch(codec: Codec, batch: Batch) -> bytes:
    return codec.compress(serialize_batch(batch))


async def _send_sequential(push, workload: Workload, mode: Mode) -> None:
    if mode is Mode.COMPRESS_AND_TRANSMIT:
        codec = workload.codec
        for batch in workload.batches:
            await push.send(Frame(flags=FLAG_COMPRESSED, payload=codec.compress(serialize_batch(batch))))
        return
    if mode is Mode.PRECOMPRESSED_TRANSMIT:
        flags, blocks = FLAG_COMPRESSED, workload.compressed_blocks
    else:
        flags, blocks = 0, workload.raw_blocks
    for block in blocks:
        await push.send(Frame(flags=flags, payload=block))


async def _send_pipelined(push, workload: Workload, executor: ThreadPoolExecutor, depth: int) -> None:
    loop = asyncio.get_running_loop()
    ready: asyncio.Queue = asyncio.Queue(maxsize=depth)

    async def produce():
        for batch in workload.batches:
            payload = await loop.run_in_executor(executor, _compress_batch, workload.codec, batch)
            await ready.put(payload)
        await ready.put(None)

    producer = asyncio.create_task(produce(), name="compress-stage")
    try:
        while (payload := await ready.get()) is not None:
            await push.send(Frame(flags=FLAG_COMPRESSED, payload=payload))
        await producer
    finally:
        if not producer.done():
            producer.cancel()


async def _run_once(mode: Mode, workload: Workload, link: LinkSpec, sink, pipelined: bool = False) -> TimingSample:
    workload.prepare(mode)
    expected = len(workload.batches)
    target = await sink.open()
    executor = ThreadPoolExecutor(max_workers=1) if pipelined and mode is Mode.COMPRESS_AND_TRANSMIT else None
    try:
        push = await connect_push(target)
        try:
            await sink.begin(expected)
            timeout = DRAIN_TIMEOUT + 2 * throttled_elapsed(workload.raw_bytes, link.rate_bits_per_s)
            started = time.perf_counter()
            if executor is not None:
                await _send_pipelined(push, workload, executor, link.send_queue_capacity)
            else:
                await _send_sequential(push, workload, mode)
            await push.flush()
            await sink.wait_drained(timeout)
            elapsed = time.perf_counter() - started
        except BaseException:
            await sink.abort()
            raise
        finally:
            await push.close()
        stats = await sink.result(workload.codec)
        wire_bytes = push.bytes_sent
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
        await sink.close()

    if stats.frames != expected or stats.bytes != wire_bytes:
        raise IntegrityError(
            f"{mode.value}/{workload.batch_size}: sent {expected} frames ({wire_bytes} bytes), "
            f"sink got {stats.frames} ({stats.bytes} bytes)"
        )
    if stats.errors or stats.digest != workload.source_digest:
        raise IntegrityError(
            f"{mode.value}/{workload.batch_size}: sink readings differ from the source "
            f"({stats.errors} undecodable frames)"
        )
    return TimingSample(
        mode=mode,
        batch_size=workload.batch_size,
        batches=expected,
        elapsed=elapsed,
        elapsed_min=elapsed,
        elapsed_max=elapsed,
        raw_bytes=workload.raw_bytes,
        wire_bytes=wire_bytes,
    )


def _make_sink(link: LinkSpec, remote=None):
    return RemoteSink(link, remote) if remote is not None else LocalSink(link)


async def run_mode(mode: Mode, data: Dataset | Workload, batch_size: int, link: LinkSpec,
                   codec: Optional[Codec] = None, pipelined: bool = False, remote=None) -> TimingSample:
    """
    Times one mode over the whole dataset at ``batch_size`` readings per message.

    Args:
        mode (Mode): Which work is inside the timing window.
        data (Dataset | Workload): Source readings, or a prepared workload.
        batch_size (int): Readings per message.
        link (LinkSpec): Link to the sink.
        codec (Codec, optional): Defaults to :func:`~iot_compression_bench.codec.default_codec`.
        pipelined (bool): Run compression in a worker thread (compress_and_transmit only).
        remote (SinkClient, optional): Control client of a ``serve`` instance; an
            in-process sink is used when omitted.

    Returns:
        TimingSample: One repetition.

    Raises:
        TransportError: The link failed; the sample is aborted.
        IntegrityError: The sink did not reconstruct the source exactly.
    """
    codec = codec or default_codec()
    workload = data if isinstance(data, Workload) else Workload.from_dataset(data, batch_size, codec)
    if workload.batch_size != batch_size:
        raise ValidationError(f"workload holds batches of {workload.batch_size}, not {batch_size}")
    try:
        return await _run_once(mode, workload, link, _make_sink(link, remote), pipelined)
    except TransportError as e:
        logger.error(f"Aborted {mode.value} at batch size {batch_size}: {e}")
        raise


def _aggregate(samples: Sequence[TimingSample]) -> TimingSample:
    first = samples[0]
    for sample in samples[1:]:
        if sample.wire_bytes != first.wire_bytes or sample.raw_bytes != first.raw_bytes:
            raise IntegrityError(
                f"{first.mode.value}/{first.batch_size}: byte counts differ between repetitions"
            )
    elapsed = [sample.elapsed for sample in samples]
    return first.model_copy(update={
        "elapsed": statistics.median(elapsed),
        "elapsed_min": min(elapsed),
        "elapsed_max": max(elapsed),
        "repetitions": len(samples),
    })


async def sweep(data: Dataset, batch_sizes: Iterable[int], link: LinkSpec, repetitions: int = 3,
                codec: Optional[Codec] = None, modes: Iterable[Mode] = ALL_MODES,
                pipelined: bool = False, warmup: bool = True, remote=None) -> SweepReport:
    """
    Runs every mode at every batch size over the same dataset.

    Each cell gets one discarded warm-up run, then ``repetitions`` timed
    runs; the row reports their median and keeps min/max. Rows are ordered
    by batch size descending, then by mode.
    """
    sizes = sorted(set(batch_sizes), reverse=True)
    if not sizes:
        raise ValidationError("batch_sizes must not be empty")
    if repetitions < 1:
        raise ValidationError(f"repetitions must be >= 1, got {repetitions}")
    selected = [mode for mode in ALL_MODES if mode in set(modes)]
    if not selected:
        raise ValidationError("at least one mode is required")
    codec = codec or default_codec()

    rows: List[TimingSample] = []
    for size in sizes:
        workload = Workload.from_dataset(data, size, codec)
        for mode in selected:
            runs = repetitions + (1 if warmup else 0)
            samples = [await run_mode(mode, workload, size, link, codec, pipelined, remote) for _ in range(runs)]
            row = _aggregate(samples[1:] if warmup else samples)
            logger.info(
                f"{mode.value:>22} batch={size:<5} elapsed={row.elapsed:.6f}s "
                f"wire={row.wire_bytes} ratio={row.compression_ratio:.3f}"
            )
            rows.append(row)

    environment = EnvironmentInfo(
        link_kind=link.kind,
        rate_bits_per_s=link.rate_bits_per_s,
        batch_sizes=sizes,
        repetitions=repetitions,
        codec=codec.name,
        tuples=data.total_tuples,
        pipelined=pipelined,
    )
    return SweepReport(rows=rows, environment=environment)


def _units(value) -> str:
    return str(round(value))


def emit_csv(report: SweepReport) -> str:
    """
    Renders the report as CSV. Energy columns are appended when every row
    carries them.
    """
    annotated = report.annotated
    header = CSV_HEADER + ("," + CSV_ENERGY_HEADER if annotated else "")
    lines = [header]
    for row in report.rows:
        fields = [
            str(row.batch_size),
            row.mode.value,
            str(row.repetitions),
            f"{row.elapsed:.6f}",
            str(row.raw_bytes),
            str(row.wire_bytes),
            f"{row.compression_ratio:.6f}",
        ]
        if annotated:
            fields += [_units(row.net_savings_units), "true" if row.worthwhile else "false"]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def emit_json(report: SweepReport) -> str:
    return report.model_dump_json(indent=2)


def compare_with_reference(report: SweepReport) -> List[dict]:
    """
    Measured seconds next to the reference table, per cell. Informational:
    the reference ran on different hardware.
    """
    column = {mode: index for index, mode in enumerate(ALL_MODES)}
    comparison = []
    for row in report.rows:
        reference = REFERENCE_TIMINGS.get(row.batch_size)
        if reference is None:
            continue
        reference_seconds = reference[column[row.mode]]
        comparison.append({
            "batch_size": row.batch_size,
            "mode": row.mode.value,
            "reference_s": reference_seconds,
            "measured_s": row.elapsed,
            "measured_over_reference": row.elapsed / reference_seconds,
        })
    return comparison
