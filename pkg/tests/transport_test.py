import asyncio
import socket
import struct
import time

import pytest
from pydantic import ValidationError as PydanticValidationError

from iot_compression_bench.exceptions import (
    BackpressureTimeout,
    BindError,
    ConnectError,
    EndOfStream,
    EndpointClosedError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from iot_compression_bench.models import Frame, LinkKind, LinkSpec
from iot_compression_bench.transport import (
    FrameDecoder,
    PullEndpoint,
    PushEndpoint,
    TokenBucket,
    bind_pull,
    connect_push,
    encode_frame,
    throttled_elapsed,
)


def test_encode_frame_wire_bytes():
    assert encode_frame(Frame(flags=0, payload=b"hello")) == bytes.fromhex("06 00 00 00 00 68 65 6c 6c 6f")


def test_encode_frame_limits():
    with pytest.raises(ValidationError):
        encode_frame(Frame(payload=b"x" * 10), max_frame_size=10)
    assert len(encode_frame(Frame(payload=b"x" * 9), max_frame_size=10)) == 14


def test_frame_model_rejects_reserved_bits():
    with pytest.raises(PydanticValidationError):
        Frame(flags=0x02, payload=b"")


def test_frame_decoder():
    decoder = FrameDecoder(max_frame_size=1 << 24)
    wire = bytes.fromhex("06 00 00 00 00 68 65 6c 6c 6f")
    assert list(decoder.feed(wire[:3])) == []
    assert decoder.pending == 3
    (frame,) = list(decoder.feed(wire[3:]))
    assert frame == Frame(flags=0, payload=b"hello")
    assert decoder.pending == 0

    two = encode_frame(Frame(flags=1, payload=b"a")) + encode_frame(Frame(payload=b""))
    assert list(decoder.feed(two)) == [Frame(flags=1, payload=b"a"), Frame(flags=0, payload=b"")]


@pytest.mark.parametrize("header", [
    struct.pack("<IB", (16 << 20) + 1, 0),
    struct.pack("<IB", 0, 0),
    struct.pack("<IB", 2, 0x80),
])
def test_frame_decoder_protocol_errors(header):
    with pytest.raises(ProtocolError):
        list(FrameDecoder(max_frame_size=16 << 20).feed(header))


@pytest.mark.parametrize("nbytes, seconds", [(1_000_000, 0.08), (0, 0.0), (16000, 0.00128)])
def test_throttled_elapsed(nbytes, seconds):
    assert throttled_elapsed(nbytes, 100_000_000) == pytest.approx(seconds)


def test_throttled_elapsed_rejects_zero_rate():
    with pytest.raises(ValidationError):
        throttled_elapsed(10, 0)


def test_token_bucket_books_back_to_back():
    now = [100.0]
    bucket = TokenBucket(8000, clock=lambda: now[0])
    assert bucket.reserve(1000) == pytest.approx(1.0)
    assert bucket.reserve(500) == pytest.approx(1.5)
    now[0] = 110.0
    assert bucket.reserve(100) == pytest.approx(0.1)


async def test_bind_pull_inproc(inproc_link):
    async with await bind_pull(inproc_link) as pull:
        assert pull.role == "pull"
        assert pull.frames_received == 0


async def test_bind_pull_rejects_zero_rate(channel):
    with pytest.raises(ValidationError):
        await bind_pull({"kind": "inproc", "address": channel, "rate_bits_per_s": 0})


async def test_bind_pull_inproc_twice(inproc_link):
    async with await bind_pull(inproc_link):
        with pytest.raises(BindError):
            await bind_pull(inproc_link)


async def test_bind_pull_tcp_occupied_port():
    with socket.socket() as occupied:
        occupied.bind(("127.0.0.1", 0))
        occupied.listen()
        port = occupied.getsockname()[1]
        with pytest.raises(BindError):
            await bind_pull(LinkSpec(kind=LinkKind.TCP, address=f"127.0.0.1:{port}"))


async def test_connect_push_without_sink(channel):
    link = LinkSpec(address=channel, connect_retries=3, connect_delay=0.01)
    with pytest.raises(ConnectError):
        await connect_push(link)


async def test_connect_push_tcp_without_sink():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    link = LinkSpec(kind=LinkKind.TCP, address=f"127.0.0.1:{port}", connect_retries=2, connect_delay=0.01)
    with pytest.raises(ConnectError):
        await connect_push(link)


async def exchange(pull_link, frames, push_link=None):
    pull = await bind_pull(pull_link)
    push = await connect_push(push_link or pull_link.model_copy(update={"address": pull.address}))
    for frame in frames:
        await push.send(frame)
    await push.flush()
    received = [await pull.recv(timeout=5) for _ in frames]
    await push.close()
    await pull.close()
    return push, pull, received


@pytest.mark.parametrize("kind", [LinkKind.INPROC, LinkKind.TCP])
async def test_fifo_and_counters(kind, inproc_link, tcp_link):
    link = inproc_link if kind is LinkKind.INPROC else tcp_link
    frames = [Frame(flags=i % 2, payload=f"m{i}".encode() * (i + 1)) for i in range(200)]
    push, pull, received = await exchange(link, frames)
    assert received == frames
    assert push.frames_sent == pull.frames_received == 200
    assert push.bytes_sent == pull.bytes_received == sum(f.wire_size for f in frames)


async def test_recv_after_close_drains_then_ends(inproc_link):
    pull = await bind_pull(inproc_link)
    push = await connect_push(inproc_link)
    await push.send(Frame(payload=b"last"))
    await push.close()
    await pull.close()
    assert (await pull.recv()).payload == b"last"
    with pytest.raises(EndOfStream):
        await pull.recv()
    with pytest.raises(EndOfStream):
        await pull.recv()


async def test_recv_timeout(inproc_link):
    async with await bind_pull(inproc_link) as pull:
        with pytest.raises(TransportError):
            await pull.recv(timeout=0.01)


async def test_send_after_close(inproc_link):
    async with await bind_pull(inproc_link):
        push = await connect_push(inproc_link)
        await push.close()
        with pytest.raises(EndpointClosedError):
            await push.send(Frame(payload=b"late"))


async def test_send_returns_on_enqueue(inproc_link):
    """A slow link does not slow down ``send`` while the queue has room."""
    link = inproc_link.model_copy(update={"rate_bits_per_s": 80_000, "send_queue_capacity": 8})
    async with await bind_pull(link):
        push = await connect_push(link)
        started = time.perf_counter()
        for _ in range(4):
            await push.send(Frame(payload=b"x" * 995))
        assert time.perf_counter() - started < 0.05
        await push.close()


async def test_backpressure_blocks_then_times_out(inproc_link):
    link = inproc_link.model_copy(update={
        "rate_bits_per_s": 8000,
        "send_queue_capacity": 1,
        "send_timeout": 0.02,
    })
    async with await bind_pull(link) as pull:
        push = await connect_push(link)
        frame = Frame(payload=b"x" * 95)
        await push.send(frame)
        started = time.perf_counter()
        await push.send(frame)
        with pytest.raises(BackpressureTimeout):
            await push.send(frame)
        assert time.perf_counter() - started >= 0.02
        await push.close()
        assert pull.frames_received == 2


async def test_throttle_floor(inproc_link):
    """10^6 wire bytes at 100 Mbit/s take at least 80 ms."""
    link = inproc_link.model_copy(update={"send_queue_capacity": 64})
    async with await bind_pull(link) as pull:
        push = await connect_push(link)
        started = time.perf_counter()
        for _ in range(1000):
            await push.send(Frame(payload=b"r" * 995))
        await push.flush()
        elapsed = time.perf_counter() - started
        await push.close()
    assert push.bytes_sent == 1_000_000
    assert pull.bytes_received == 1_000_000
    assert elapsed >= throttled_elapsed(1_000_000, 100_000_000) - 0.001


async def test_two_peers_keep_their_order(inproc_link):
    async with await bind_pull(inproc_link) as pull:
        first = await connect_push(inproc_link)
        second = await connect_push(inproc_link)
        for i in range(100):
            await first.send(Frame(payload=b"a%d" % i))
            await second.send(Frame(payload=b"b%d" % i))
        await asyncio.gather(first.flush(), second.flush())
        received = [await pull.recv(timeout=5) for _ in range(200)]
        await first.close()
        await second.close()
    for prefix in (b"a", b"b"):
        sequence = [f.payload for f in received if f.payload.startswith(prefix)]
        assert sequence == [prefix + b"%d" % i for i in range(100)]


async def test_two_tcp_peers_keep_their_order(tcp_link):
    async with await bind_pull(tcp_link) as pull:
        target = tcp_link.model_copy(update={"address": pull.address})
        peers = [await connect_push(target) for _ in range(2)]
        for i in range(100):
            for index, peer in enumerate(peers):
                await peer.send(Frame(payload=b"%d:%d" % (index, i)))
        await asyncio.gather(*(peer.flush() for peer in peers))
        received = [await pull.recv(timeout=5) for _ in range(200)]
        for peer in peers:
            await peer.close()
    for index in range(2):
        prefix = b"%d:" % index
        assert [f.payload for f in received if f.payload.startswith(prefix)] == [
            prefix + b"%d" % i for i in range(100)
        ]


async def test_inproc_reconnect_after_sink_restart(inproc_link):
    first = await bind_pull(inproc_link)
    push = await connect_push(inproc_link)
    await push.send(Frame(payload=b"before"))
    await push.flush()
    assert (await first.recv(timeout=1)).payload == b"before"
    await first.close()

    second = await bind_pull(inproc_link)
    await push.send(Frame(payload=b"after"))
    await push.flush()
    assert (await second.recv(timeout=1)).payload == b"after"
    await push.close()
    await second.close()


async def test_tcp_reconnect_after_sink_restart(tcp_link):
    first = await bind_pull(tcp_link)
    target = tcp_link.model_copy(update={"address": first.address, "connect_retries": 20})
    push = await connect_push(target)
    await push.send(Frame(payload=b"before"))
    await push.flush()
    assert (await first.recv(timeout=1)).payload == b"before"
    await first.close()
    await asyncio.sleep(0.05)

    second = await bind_pull(target)
    await push.send(Frame(payload=b"after"))
    await push.flush()
    assert (await second.recv(timeout=2)).payload == b"after"
    await push.close()
    await second.close()


async def test_tcp_oversized_frame_drops_connection(tcp_link):
    link = tcp_link.model_copy(update={"max_frame_size": 1024})
    async with await bind_pull(link) as pull:
        host, port = pull.address.rsplit(":", 1)
        reader, writer = await asyncio.open_connection(host, int(port))
        writer.write(encode_frame(Frame(payload=b"ok")) + struct.pack("<IB", 4096, 0))
        await writer.drain()
        try:
            tail = await asyncio.wait_for(reader.read(), timeout=2)
        except ConnectionResetError:
            tail = b""
        assert tail == b""
        writer.close()
        assert (await pull.recv(timeout=1)).payload == b"ok"
        assert pull.protocol_errors == 1


def test_endpoints_are_abstract(inproc_link):
    class HalfWired(PushEndpoint):
        async def _connect_once(self) -> None:
            pass

    with pytest.raises(TypeError):
        PullEndpoint(inproc_link)
    with pytest.raises(TypeError):
        HalfWired(inproc_link)


async def test_tcp_close_reads_bytes_already_sent(tcp_link):
    pull = await bind_pull(tcp_link)
    host, port = pull.address.rsplit(":", 1)
    reader, writer = await asyncio.open_connection(host, int(port))
    writer.write(b"".join(encode_frame(Frame(payload=bytes([i % 256]) * 512)) for i in range(400)))
    await writer.drain()
    await pull.close()
    received = 0
    with pytest.raises(EndOfStream):
        while True:
            await pull.recv(timeout=1)
            received += 1
    assert received == 400
    writer.close()
