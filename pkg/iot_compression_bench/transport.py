"""
Push/pull message transport with length-prefixed framing.

Wire format per frame: ``[u32 LE length][u8 flags][payload]`` where length
counts the flags byte plus the payload. Two link kinds share the same
framing, pacing and endpoint API: real TCP stream sockets and an in-process
channel that emulates the wire.
"""
import asyncio
import struct
import time
from abc import ABC, abstractmethod
from typing import Callable, Dict, Iterator, Optional, Set

from pydantic import ValidationError as PydanticValidationError

from iot_compression_bench.constants import (
    CLOSE_DRAIN_QUIET,
    CLOSE_DRAIN_TIMEOUT,
    FLAG_COMPRESSED,
    FRAME_HEADER_SIZE,
    THROTTLE_GRANULARITY,
)
from iot_compression_bench.custom_logger import get_logger
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

logger = get_logger(__name__)

_HEADER = struct.Struct("<IB")
_READ_CHUNK = 1 << 16
_STOP = object()
_CLOSED = object()


def throttled_elapsed(nbytes: int, rate_bits_per_s: int) -> float:
    """Lower bound, in seconds, for moving ``nbytes`` over a link of the given rate."""
    if rate_bits_per_s <= 0:
        raise ValidationError(f"rate must be positive, got {rate_bits_per_s}")
    return 8 * nbytes / rate_bits_per_s


def encode_frame(frame: Frame, max_frame_size: Optional[int] = None) -> bytes:
    """
    Serializes a frame to its wire bytes.

    Raises:
        ValidationError: If reserved flag bits are set or the frame exceeds
            ``max_frame_size``.
    """
    if frame.flags & ~FLAG_COMPRESSED:
        raise ValidationError(f"reserved flag bits set: {frame.flags:#04x}")
    if max_frame_size is not None and frame.length > max_frame_size:
        raise ValidationError(f"frame length {frame.length} exceeds max frame size {max_frame_size}")
    return _HEADER.pack(frame.length, frame.flags) + frame.payload


class FrameDecoder:
    """
    Incremental decoder: feed it bytes as they arrive, get whole frames back.

    The length field is checked as soon as the header is complete, so an
    oversized frame is rejected before its payload is buffered.
    """

    def __init__(self, max_frame_size: int):
        self.max_frame_size = max_frame_size
        self._buf = bytearray()

    @property
    def pending(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> Iterator[Frame]:
        """
        Buffers ``data`` and yields every frame it completes. Frames ahead of
        a malformed header are yielded before the ProtocolError is raised.
        """
        buf = self._buf
        buf += data
        while len(buf) >= FRAME_HEADER_SIZE:
            length, flags = _HEADER.unpack_from(buf, 0)
            if length < 1:
                raise ProtocolError("frame length field is zero")
            if length > self.max_frame_size:
                raise ProtocolError(f"frame length {length} exceeds max frame size {self.max_frame_size}")
            if flags & ~FLAG_COMPRESSED:
                raise ProtocolError(f"reserved flag bits set: {flags:#04x}")
            total = 4 + length
            if len(buf) < total:
                break
            frame = Frame.model_construct(flags=flags, payload=bytes(buf[FRAME_HEADER_SIZE:total]))
            del buf[:total]
            yield frame


class TokenBucket:
    """
    Paces bytes onto a link at ``rate_bits_per_s``.

    The bucket starts empty and refills continuously, so ``n`` bytes are
    never through before ``8 * n / rate`` seconds after the first byte was
    offered. Debts shorter than the granularity are carried instead of slept.
    """

    def __init__(self, rate_bits_per_s: int, granularity: float = THROTTLE_GRANULARITY,
                 clock: Callable[[], float] = time.monotonic):
        if rate_bits_per_s <= 0:
            raise ValidationError(f"rate must be positive, got {rate_bits_per_s}")
        self.rate_bits_per_s = rate_bits_per_s
        self.granularity = granularity
        self._clock = clock
        self._release_at: Optional[float] = None

    def reserve(self, nbytes: int) -> float:
        """Books ``nbytes`` and returns how long until they are through."""
        now = self._clock()
        start = now if self._release_at is None else max(now, self._release_at)
        self._release_at = start + throttled_elapsed(nbytes, self.rate_bits_per_s)
        return self._release_at - now

    async def consume(self, nbytes: int) -> None:
        delay = self.reserve(nbytes)
        if delay >= self.granularity:
            await asyncio.sleep(delay)

    async def settle(self) -> None:
        """Waits out any carried debt."""
        if self._release_at is None:
            return
        delay = self._release_at - self._clock()
        if delay > 0:
            await asyncio.sleep(delay)


def _validated(link: LinkSpec | dict) -> LinkSpec:
    try:
        if isinstance(link, LinkSpec):
            return LinkSpec.model_validate(link.model_dump())
        return LinkSpec.model_validate(link)
    except PydanticValidationError as e:
        raise ValidationError(f"invalid link spec: {e.errors()[0]['msg']}") from e


class PullEndpoint(ABC):
    """
    Sink side. Receives frames from any number of push peers, in arrival
    order, preserving each peer's send order.

    Attributes:
        link (LinkSpec): Link description.
        address (str): Bound address; for tcp the real port when 0 was requested.
        frames_received (int): Frames accepted so far.
        bytes_received (int): Wire bytes accepted so far, framing included.
        protocol_errors (int): Connections dropped for malformed frames.
    """
    role = "pull"

    def __init__(self, link: LinkSpec):
        self.link = link
        self.address = link.address
        self.frames_received = 0
        self.bytes_received = 0
        self.protocol_errors = 0
        self._inbox: asyncio.Queue = asyncio.Queue()
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    @abstractmethod
    async def _bind(self) -> None:
        ...

    def _deliver(self, frame: Frame) -> None:
        self.frames_received += 1
        self.bytes_received += frame.wire_size
        self._inbox.put_nowait(frame)

    async def recv(self, timeout: Optional[float] = None) -> Frame:
        """
        Returns the next frame, blocking until one arrives.

        Raises:
            EndOfStream: If the endpoint is closed and every frame has been drained.
            TransportError: If ``timeout`` elapses first.
        """
        if timeout is None:
            item = await self._inbox.get()
        else:
            try:
                item = await asyncio.wait_for(self._inbox.get(), timeout)
            except asyncio.TimeoutError:
                raise TransportError(f"no frame within {timeout}s") from None
        if item is _CLOSED:
            self._inbox.put_nowait(_CLOSED)
            raise EndOfStream()
        return item

    async def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._inbox.put_nowait(_CLOSED)

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc, tb):
        await self.close()


class PushEndpoint(ABC):
    """
    Sensor side. ``send`` returns once a frame is in the bounded send queue;
    a sender task paces queued frames onto the link in FIFO order.

    Attributes:
        link (LinkSpec): Link description.
        frames_sent (int): Frames written to the link.
        bytes_sent (int): Wire bytes written to the link, framing included.
    """
    role = "push"

    def __init__(self, link: LinkSpec):
        self.link = link
        self.frames_sent = 0
        self.bytes_sent = 0
        self._queue: asyncio.Queue = asyncio.Queue(maxsize=link.send_queue_capacity)
        self._bucket = TokenBucket(link.rate_bits_per_s)
        self._sender: Optional[asyncio.Task] = None
        self._failure: Optional[BaseException] = None
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    @abstractmethod
    async def _connect_once(self) -> None:
        ...

    @abstractmethod
    async def _write(self, data: bytes) -> None:
        ...

    async def _disconnect(self) -> None:
        pass

    async def _connect(self) -> None:
        last_error: Optional[BaseException] = None
        for attempt in range(1, self.link.connect_retries + 1):
            try:
                await self._connect_once()
                logger.debug(f"Push connected to {self.link.kind.value}:{self.link.address} (attempt {attempt})")
                return
            except OSError as e:
                last_error = e
                logger.debug(f"Connect to {self.link.address} failed at attempt {attempt}: {e}")
                await asyncio.sleep(self.link.connect_delay)
        raise ConnectError(
            f"could not reach {self.link.kind.value}:{self.link.address} "
            f"after {self.link.connect_retries} attempts: {last_error}"
        )

    async def _start(self) -> None:
        await self._connect()
        self._sender = asyncio.create_task(self._run(), name=f"push-{self.link.address}")

    async def _run(self) -> None:
        while True:
            data = await self._queue.get()
            try:
                if data is _STOP:
                    return
                if self._failure is not None:
                    continue
                await self._bucket.consume(len(data))
                await self._write(data)
                self.frames_sent += 1
                self.bytes_sent += len(data)
            except asyncio.CancelledError:
                raise
            except Exception as e:
                self._failure = e
                logger.error(f"Push to {self.link.address} failed: {e}")
            finally:
                self._queue.task_done()

    def _check_usable(self) -> None:
        if self._closed:
            raise EndpointClosedError()
        if self._failure is not None:
            raise TransportError(f"link failed: {self._failure}") from self._failure

    async def send(self, frame: Frame) -> None:
        """
        Enqueues ``frame`` for delivery; does not wait for it to be delivered.

        Raises:
            EndpointClosedError: If the endpoint was closed.
            BackpressureTimeout: If the queue stays full for ``link.send_timeout``.
            TransportError: If the link has failed.
        """
        self._check_usable()
        data = encode_frame(frame, self.link.max_frame_size)
        if not self._queue.full():
            self._queue.put_nowait(data)
            return
        try:
            await asyncio.wait_for(self._queue.put(data), self.link.send_timeout)
        except asyncio.TimeoutError:
            raise BackpressureTimeout(
                f"send queue of {self.link.send_queue_capacity} frames full for {self.link.send_timeout}s"
            ) from None

    async def flush(self) -> None:
        """Waits until every queued frame is written and the pacer's debt is paid."""
        await self._queue.join()
        if self._failure is not None:
            raise TransportError(f"link failed: {self._failure}") from self._failure
        await self._bucket.settle()

    async def close(self) -> None:
        if self._closed:
            return
        try:
            if self._failure is None:
                await self.flush()
        finally:
            self._closed = True
            if self._sender is not None:
                if self._queue.full():
                    self._sender.cancel()
                else:
                    self._queue.put_nowait(_STOP)
                try:
                    await self._sender
                except asyncio.CancelledError:
                    pass
            await self._disconnect()

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc, tb):
        await self.close()


_CHANNELS: Dict[str, "InprocPullEndpoint"] = {}


class InprocPullEndpoint(PullEndpoint):
    """Pull side of the in-process link, registered under its channel name."""

    async def _bind(self) -> None:
        bound = _CHANNELS.get(self.link.address)
        if bound is not None and not bound.closed:
            raise BindError(f"inproc channel {self.link.address!r} is already bound")
        _CHANNELS[self.link.address] = self
        logger.debug(f"Pull bound to inproc:{self.link.address}")

    def _attach(self) -> FrameDecoder:
        if self._closed:
            raise ConnectionRefusedError(f"inproc channel {self.link.address!r} is closed")
        return FrameDecoder(self.link.max_frame_size)

    def _receive(self, decoder: FrameDecoder, data: bytes) -> None:
        try:
            for frame in decoder.feed(data):
                self._deliver(frame)
        except ProtocolError as e:
            self.protocol_errors += 1
            logger.warning(f"Dropping inproc peer on {self.link.address}: {e}")
            raise

    async def close(self) -> None:
        if _CHANNELS.get(self.link.address) is self:
            del _CHANNELS[self.link.address]
        await super().close()


class InprocPushEndpoint(PushEndpoint):
    """Push side of the in-process link."""

    def __init__(self, link: LinkSpec):
        super().__init__(link)
        self._peer: Optional[InprocPullEndpoint] = None
        self._decoder: Optional[FrameDecoder] = None

    async def _connect_once(self) -> None:
        peer = _CHANNELS.get(self.link.address)
        if peer is None or peer.closed:
            raise ConnectionRefusedError(f"no sink bound to inproc channel {self.link.address!r}")
        self._decoder = peer._attach()
        self._peer = peer

    async def _write(self, data: bytes) -> None:
        if self._peer is None or self._peer.closed:
            logger.info(f"Sink on inproc:{self.link.address} went away; reconnecting")
            await self._connect()
        self._peer._receive(self._decoder, data)

    async def _disconnect(self) -> None:
        self._peer = None


class TcpPullEndpoint(PullEndpoint):
    """Pull side over TCP: one reader task per connected push peer."""

    def __init__(self, link: LinkSpec):
        super().__init__(link)
        self._server: Optional[asyncio.AbstractServer] = None
        self._connections: Set[asyncio.StreamWriter] = set()
        self._bytes_read = 0

    async def _bind(self) -> None:
        try:
            self._server = await asyncio.start_server(self._handle, self.link.host, self.link.port)
        except OSError as e:
            raise BindError(f"cannot bind tcp:{self.link.address}: {e.strerror or e}") from e
        port = self._server.sockets[0].getsockname()[1]
        self.address = f"{self.link.host}:{port}"
        logger.info(f"Pull listening on tcp:{self.address}")

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        decoder = FrameDecoder(self.link.max_frame_size)
        self._connections.add(writer)
        logger.debug(f"Push peer connected from {peer}")
        try:
            while True:
                data = await reader.read(_READ_CHUNK)
                if not data:
                    break
                self._bytes_read += len(data)
                for frame in decoder.feed(data):
                    self._deliver(frame)
        except ProtocolError as e:
            self.protocol_errors += 1
            logger.warning(f"Dropping connection from {peer}: {e}")
        except ConnectionError as e:
            logger.debug(f"Connection from {peer} lost: {e}")
        finally:
            if decoder.pending:
                logger.warning(f"Discarding {decoder.pending} bytes of a partial frame from {peer}")
            self._connections.discard(writer)
            writer.close()

    async def _drain(self) -> None:
        """Lets readers consume buffered bytes until the connections go quiet."""
        deadline = time.monotonic() + CLOSE_DRAIN_TIMEOUT
        while self._connections and time.monotonic() < deadline:
            seen = self._bytes_read
            await asyncio.sleep(CLOSE_DRAIN_QUIET)
            if self._bytes_read == seen:
                return
        if self._connections:
            logger.warning(f"tcp:{self.address} still receiving after {CLOSE_DRAIN_TIMEOUT}s; closing anyway")

    async def close(self) -> None:
        """Stops accepting peers, drains bytes already sent, then closes every connection."""
        if self._server is not None:
            self._server.close()
            await self._drain()
            for writer in list(self._connections):
                writer.close()
            await self._server.wait_closed()
            self._server = None
        await super().close()


class TcpPushEndpoint(PushEndpoint):
    """Push side over TCP; reconnects when the sink goes away."""

    def __init__(self, link: LinkSpec):
        super().__init__(link)
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None

    async def _connect_once(self) -> None:
        self._reader, self._writer = await asyncio.open_connection(self.link.host, self.link.port)

    def _connection_lost(self) -> bool:
        # The sink never writes, so EOF on the read side means it hung up.
        return self._writer is None or self._writer.is_closing() or self._reader.at_eof()

    async def _write(self, data: bytes) -> None:
        for attempt in range(2):
            if self._connection_lost():
                if self._writer is not None:
                    logger.info(f"Sink at tcp:{self.link.address} went away; reconnecting")
                    self._writer.close()
                    self._writer = None
                await self._connect()
            try:
                self._writer.write(data)
                await self._writer.drain()
                return
            except ConnectionError as e:
                logger.warning(f"Write to tcp:{self.link.address} failed: {e}")
                self._writer.close()
                self._writer = None
        raise TransportError(f"could not deliver frame to tcp:{self.link.address}")

    async def _disconnect(self) -> None:
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except ConnectionError:
                pass
            self._writer = None


async def bind_pull(link: LinkSpec | dict) -> PullEndpoint:
    """
    Creates a sink endpoint ready to accept push peers.

    Raises:
        ValidationError: If the link spec is invalid.
        BindError: If the address or channel name is taken.
    """
    link = _validated(link)
    endpoint = TcpPullEndpoint(link) if link.kind is LinkKind.TCP else InprocPullEndpoint(link)
    await endpoint._bind()
    return endpoint


async def connect_push(link: LinkSpec | dict) -> PushEndpoint:
    """
    Creates a sensor endpoint connected to the sink described by ``link``.

    Raises:
        ValidationError: If the link spec is invalid.
        ConnectError: If the sink cannot be reached within the retry budget.
    """
    link = _validated(link)
    endpoint = TcpPushEndpoint(link) if link.kind is LinkKind.TCP else InprocPushEndpoint(link)
    await endpoint._start()
    return endpoint
