import math
import random
import struct

import pytest
from pydantic import ValidationError as PydanticValidationError

from iot_compression_bench.exceptions import FramingError, ParseError, ValidationError
from iot_compression_bench.models import ApplianceProfile, Batch, Reading
from iot_compression_bench.record_model import (
    Dataset,
    deserialize_batch,
    digest_readings,
    generate_synthetic,
    parse_redd_line,
    serialize_batch,
    write_redd,
)


def test_parse_redd_line():
    assert parse_redd_line("1303132930 245.0") == Reading(timestamp=1303132930, power=245.0)
    assert parse_redd_line("0 0") == Reading(timestamp=0, power=0.0)
    assert parse_redd_line("1303132931\t6.21\n").power == 6.21


@pytest.mark.parametrize("line", ["12ab 5.0", "", "1303132930", "1303132930 abc", "-5 1.0"])
def test_parse_redd_line_rejects_malformed(line):
    with pytest.raises(ParseError):
        parse_redd_line(line)


@pytest.mark.parametrize("line", ["1 nan", "1 inf", "1 -Infinity"])
def test_parse_redd_line_rejects_non_finite(line):
    with pytest.raises(ParseError):
        parse_redd_line(line)


def test_parse_error_carries_line_number():
    with pytest.raises(ParseError) as excinfo:
        parse_redd_line("12ab 5.0", line_number=42)
    assert excinfo.value.line_number == 42
    assert "line 42" in str(excinfo.value)


def test_serialize_batch_layout():
    raw = serialize_batch(Batch(readings=(Reading(timestamp=1, power=2.0),)))
    assert raw == bytes.fromhex("0100000000000000" "0000000000000040")


def test_serialize_batch_length_law():
    readings = tuple(Reading(timestamp=i, power=float(i)) for i in range(1000))
    assert len(serialize_batch(Batch(readings=readings))) == 16000


def test_deserialize_batch():
    assert deserialize_batch(bytes(16), 1).readings == (Reading(timestamp=0, power=0.0),)
    raw = bytes.fromhex("0100000000000000" "0000000000000040")
    assert deserialize_batch(raw, 1).readings == (Reading(timestamp=1, power=2.0),)


def test_deserialize_batch_length_mismatch():
    with pytest.raises(FramingError):
        deserialize_batch(bytes(17), 1)


def test_deserialize_batch_rejects_nan_payload():
    raw = struct.pack("<Qd", 1, math.nan)
    with pytest.raises(ValidationError):
        deserialize_batch(raw, 1)


def test_batch_roundtrip_is_bit_exact():
    rng = random.Random(1)
    readings = []
    for _ in range(500):
        power = rng.choice([0.0, -0.0, 5e-324, 1.7976931348623157e308, rng.uniform(-1e6, 1e6)])
        readings.append(Reading(timestamp=rng.randrange(1 << 64), power=power))
    batch = Batch(readings=tuple(readings))
    decoded = deserialize_batch(serialize_batch(batch), len(readings))
    assert serialize_batch(decoded) == serialize_batch(batch)
    assert [math.copysign(1, r.power) for r in decoded.readings] == [math.copysign(1, r.power) for r in readings]


def test_reading_rejects_out_of_range_timestamp():
    with pytest.raises(PydanticValidationError):
        Reading(timestamp=1 << 64, power=0.0)


def test_generate_synthetic_is_deterministic():
    first = generate_synthetic(7, 5).readings()
    second = generate_synthetic(7, 5).readings()
    assert first == second
    assert generate_synthetic(8, 500).readings() != generate_synthetic(7, 500).readings()


def test_generate_synthetic_timestamps_step_by_one():
    readings = generate_synthetic(7, 1000).readings()
    assert all(b.timestamp - a.timestamp == 1 for a, b in zip(readings, readings[1:]))


def test_generate_synthetic_has_long_runs():
    """Default profile repeats the previous power value in at least 90% of readings."""
    readings = generate_synthetic(7, 100_000).readings()
    equal = sum(1 for a, b in zip(readings, readings[1:]) if a.power == b.power)
    assert equal / (len(readings) - 1) >= 0.9


def test_generate_synthetic_rejects_empty():
    with pytest.raises(ValidationError):
        generate_synthetic(7, 0)


def test_generate_synthetic_rejects_timestamp_overflow():
    profile = ApplianceProfile(start_timestamp=(1 << 64) - 2)
    with pytest.raises(ValidationError):
        generate_synthetic(7, 5, profile)


def test_dataset_batches_drop_partial_tail():
    data = Dataset.synthetic(7, 1050)
    batches = data.batches(100)
    assert len(batches) == 10
    assert all(batch.size == 100 for batch in batches)
    assert batches[0].readings[0] == data.readings()[0]


def test_dataset_batches_need_one_full_batch():
    with pytest.raises(ValidationError):
        Dataset.synthetic(7, 10).batches(20)


def test_redd_file_roundtrip(tmp_path):
    data = generate_synthetic(7, 300)
    path = tmp_path / "channel_5.dat"
    assert write_redd(data, path) == 300

    loaded = Dataset.from_file(path)
    assert len(loaded) == 300
    assert list(loaded) == data.readings()
    assert digest_readings(loaded) == digest_readings(data)


def test_redd_file_error_is_positioned(tmp_path):
    path = tmp_path / "channel_1.dat"
    path.write_text("1303132930 245.0\n1303132931 12ab\n")
    data = Dataset.from_file(path)
    assert data.total_tuples == 2
    with pytest.raises(ParseError) as excinfo:
        data.readings()
    assert excinfo.value.line_number == 2


def test_redd_file_non_ascii_byte_is_positioned(tmp_path):
    path = tmp_path / "channel_1.dat"
    path.write_bytes(b"1303132930 245.0\n1303132931 2\xc3\xa95.0\n")
    with pytest.raises(ParseError) as excinfo:
        Dataset.from_file(path)
    assert excinfo.value.line_number == 2
    assert "column 13" in str(excinfo.value)


def test_dataset_from_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        Dataset.from_file(tmp_path / "missing.dat")
