import json
import platform

import pytest

from iot_compression_bench.codec import compress, decompress, get_codec
from iot_compression_bench.constants import CSV_HEADER, DEFAULT_CODEC, REFERENCE_TIMINGS
from iot_compression_bench.energy_model import annotate_report
from iot_compression_bench.exceptions import IntegrityError, ValidationError
from iot_compression_bench.harness import Workload, compare_with_reference, emit_csv, emit_json, run_mode, sweep
from iot_compression_bench.models import ALL_MODES, LinkKind, LinkSpec, Mode, SweepReport, TimingSample
from iot_compression_bench.record_model import Dataset
from iot_compression_bench.transport import throttled_elapsed


class LossyCodec:
    """Compresses correctly but decodes one byte short of the original."""
    name = "lossy"

    def compress(self, raw: bytes) -> bytes:
        return compress(raw)

    def decompress(self, block: bytes) -> bytes:
        return decompress(block)[:-1]


async def test_raw_transmit_wire_bytes(inproc_link):
    data = Dataset.synthetic(7, 200)
    sample = await run_mode(Mode.RAW_TRANSMIT, data, 20, inproc_link)
    assert sample.batches == 10
    assert sample.raw_bytes == 3200
    assert sample.wire_bytes == 10 * (5 + 320) == 3250
    assert sample.compression_ratio == 1.0


@pytest.mark.parametrize("mode", ALL_MODES)
async def test_run_mode_is_lossless_and_throttled(mode, inproc_link, small_dataset):
    sample = await run_mode(mode, small_dataset, 100, inproc_link)
    assert sample.mode is mode
    assert sample.batches == 20
    assert sample.raw_bytes == 32000
    assert sample.elapsed >= throttled_elapsed(sample.wire_bytes, inproc_link.rate_bits_per_s) - 0.001


async def test_run_mode_over_tcp(tcp_link, small_dataset):
    sample = await run_mode(Mode.PRECOMPRESSED_TRANSMIT, small_dataset, 200, tcp_link)
    assert sample.batches == 10
    assert sample.wire_bytes < sample.raw_bytes


async def test_pipelined_matches_sequential_bytes(inproc_link, small_dataset):
    sequential = await run_mode(Mode.COMPRESS_AND_TRANSMIT, small_dataset, 100, inproc_link)
    pipelined = await run_mode(Mode.COMPRESS_AND_TRANSMIT, small_dataset, 100, inproc_link, pipelined=True)
    assert pipelined.wire_bytes == sequential.wire_bytes


async def test_compressed_modes_send_identical_bytes(inproc_link, small_dataset):
    workload = Workload.from_dataset(small_dataset, 100, get_codec("snappy"))
    inline = await run_mode(Mode.COMPRESS_AND_TRANSMIT, workload, 100, inproc_link)
    ahead = await run_mode(Mode.PRECOMPRESSED_TRANSMIT, workload, 100, inproc_link)
    assert inline.wire_bytes == ahead.wire_bytes
    assert inline.wire_bytes == sum(len(block) + 5 for block in workload.compressed_blocks)


async def test_sink_mismatch_fails_loudly(inproc_link, small_dataset):
    with pytest.raises(IntegrityError):
        await run_mode(Mode.PRECOMPRESSED_TRANSMIT, small_dataset, 100, inproc_link, codec=LossyCodec())


async def test_run_mode_rejects_mismatched_workload(inproc_link, small_dataset):
    workload = Workload.from_dataset(small_dataset, 100, get_codec("snappy"))
    with pytest.raises(ValidationError):
        await run_mode(Mode.RAW_TRANSMIT, workload, 200, inproc_link)


async def test_sweep_rows_and_ordering(inproc_link, small_dataset):
    report = await sweep(small_dataset, [20, 1000, 100, 200], inproc_link, repetitions=1, warmup=False)
    assert len(report.rows) == 12
    assert [row.batch_size for row in report.rows] == [1000] * 3 + [200] * 3 + [100] * 3 + [20] * 3
    assert [row.mode for row in report.rows[:3]] == list(ALL_MODES)
    assert report.environment.batch_sizes == [1000, 200, 100, 20]
    assert report.environment.tuples == 2000
    assert report.environment.codec == DEFAULT_CODEC
    assert report.environment.machine == platform.machine()
    assert report.environment.platform == platform.platform()
    assert report.environment.python_version == platform.python_version()


async def test_sweep_aggregates_repetitions(inproc_link, small_dataset):
    report = await sweep(small_dataset, [200], inproc_link, repetitions=5, modes=[Mode.RAW_TRANSMIT])
    (row,) = report.rows
    assert row.repetitions == 5
    assert row.elapsed_min <= row.elapsed <= row.elapsed_max


async def test_sweep_selects_modes(inproc_link, small_dataset):
    report = await sweep(small_dataset, [1000, 200, 100, 20], inproc_link, repetitions=1,
                         modes=[Mode.RAW_TRANSMIT], warmup=False)
    assert len(report.rows) == 4
    assert {row.mode for row in report.rows} == {Mode.RAW_TRANSMIT}


@pytest.mark.parametrize("kwargs", [
    {"batch_sizes": []},
    {"repetitions": 0},
    {"modes": []},
])
async def test_sweep_rejects_invalid_arguments(kwargs, inproc_link, small_dataset):
    arguments = {"batch_sizes": [100], "repetitions": 1, **kwargs}
    with pytest.raises(ValidationError):
        await sweep(small_dataset, link=inproc_link, **arguments)


async def test_byte_counts_are_deterministic(inproc_link, small_dataset):
    first = await sweep(small_dataset, [100, 20], inproc_link, repetitions=1, warmup=False)
    second = await sweep(small_dataset, [100, 20], inproc_link, repetitions=1, warmup=False)
    assert [r.wire_bytes for r in first.rows] == [r.wire_bytes for r in second.rows]


def test_emit_csv_header_only():
    assert emit_csv(SweepReport()) == CSV_HEADER + "\n"
    assert CSV_HEADER == "batch_size,mode,repetitions,elapsed_s,raw_bytes,wire_bytes,compression_ratio"


def test_emit_csv_raw_row():
    row = TimingSample(
        mode=Mode.RAW_TRANSMIT, batch_size=1000, batches=1, elapsed=0.00128, raw_bytes=16000, wire_bytes=16005,
    )
    lines = emit_csv(SweepReport(rows=[row])).splitlines()
    assert lines[1] == "1000,raw_transmit,1,0.001280,16000,16005,1.000000"


async def test_emit_csv_schema(inproc_link, small_dataset):
    report = await sweep(small_dataset, [200, 100], inproc_link, repetitions=1, warmup=False)
    lines = emit_csv(report).splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 7
    for line in lines:
        assert len(line.split(",")) == 7
    assert all(len(line.split(",")[3].split(".")[1]) == 6 for line in lines[1:])


async def test_emit_json(inproc_link, small_dataset):
    report = annotate_report(await sweep(small_dataset, [200], inproc_link, repetitions=1, warmup=False))
    document = json.loads(emit_json(report))
    assert len(document["rows"]) == 3
    assert document["rows"][0]["mode"] == "compress_and_transmit"
    assert "compression_ratio" in document["rows"][0]
    assert document["environment"]["link_kind"] == "inproc"
    assert SweepReport.model_validate(document).rows[0].wire_bytes == report.rows[0].wire_bytes


async def test_compare_with_reference(inproc_link, small_dataset):
    report = await sweep(small_dataset, [1000, 50], inproc_link, repetitions=1, warmup=False)
    comparison = compare_with_reference(report)
    assert len(comparison) == 3
    reference = {entry["mode"]: entry["reference_s"] for entry in comparison}
    assert reference == {
        "compress_and_transmit": 93,
        "precompressed_transmit": 1,
        "raw_transmit": 48,
    }
    assert REFERENCE_TIMINGS[20] == (1878, 9, 3)


@pytest.mark.slow
async def test_sweep_reproduces_reference_trends(channel):
    """10^5 readings at 100 Mbit/s over the default batch sizes."""
    data = Dataset.synthetic(7, 100_000)
    link = LinkSpec(kind=LinkKind.INPROC, address=channel)
    report = await sweep(data, [1000, 200, 100, 20], link, repetitions=5)

    inline = [report.row(Mode.COMPRESS_AND_TRANSMIT, size) for size in (20, 100, 200, 1000)]
    assert all(a.elapsed > b.elapsed for a, b in zip(inline, inline[1:])), [r.elapsed for r in inline]

    for size in (1000, 200, 100, 20):
        ahead = report.row(Mode.PRECOMPRESSED_TRANSMIT, size)
        assert ahead.elapsed <= report.row(Mode.COMPRESS_AND_TRANSMIT, size).elapsed
        if size >= 100:
            assert ahead.wire_bytes < report.row(Mode.RAW_TRANSMIT, size).wire_bytes

    for row in report.rows:
        assert row.elapsed_min >= throttled_elapsed(row.wire_bytes, link.rate_bits_per_s) - 0.001

    annotated = annotate_report(report)
    assert all(row.worthwhile for row in annotated.rows if row.batch_size >= 100)
