import uuid

import pytest

from iot_compression_bench.models import LinkKind, LinkSpec
from iot_compression_bench.record_model import Dataset


@pytest.fixture
def channel():
    """A fresh inproc channel name per test."""
    return f"test-{uuid.uuid4().hex[:8]}"


@pytest.fixture
def inproc_link(channel):
    return LinkSpec(kind=LinkKind.INPROC, address=channel, send_queue_capacity=8)


@pytest.fixture
def tcp_link():
    return LinkSpec(kind=LinkKind.TCP, address="127.0.0.1:0", connect_retries=3, connect_delay=0.01)


@pytest.fixture(scope="session")
def small_dataset():
    return Dataset.synthetic(seed=7, n=2000)
