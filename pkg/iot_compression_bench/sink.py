"""
Sink side of the benchmark.

``SinkServer`` is what ``icb serve`` runs: a tcp pull endpoint whose frames
are counted and buffered on arrival, plus a small HTTP control API the
remote sensor uses to reset counters, await drain and, once its timing
window has closed, fetch the reconstructed digest.
``LocalSink`` and ``RemoteSink`` give the harness one interface for an
in-process sink and for a ``serve`` instance on another host.
"""
import asyncio
import hashlib
import time
import uuid
from typing import List, Optional

import aiohttp
from aiohttp import web

from iot_compression_bench.codec import Codec
from iot_compression_bench.custom_logger import get_logger
from iot_compression_bench.exceptions import (
    CodecError,
    EndOfStream,
    IntegrityError,
    SinkRequestError,
    TransportError,
)
from iot_compression_bench.models import Frame, LinkKind, LinkSpec, SinkStats
from iot_compression_bench.transport import PullEndpoint, bind_pull

logger = get_logger(__name__)


class StreamDigest:
    """Running digest of reconstructed raw payloads."""

    def __init__(self):
        self._hash = hashlib.blake2b(digest_size=16)
        self.frames = 0
        self.bytes = 0
        self.raw_bytes = 0
        self.errors = 0

    def update(self, frame: Frame, codec: Codec) -> None:
        self.frames += 1
        self.bytes += frame.wire_size
        try:
            raw = codec.decompress(frame.payload) if frame.compressed else frame.payload
        except CodecError as e:
            self.errors += 1
            logger.error(f"Frame {self.frames} failed to decompress: {e}")
            return
        self.raw_bytes += len(raw)
        self._hash.update(raw)

    def stats(self) -> SinkStats:
        return SinkStats(
            frames=self.frames,
            bytes=self.bytes,
            raw_bytes=self.raw_bytes,
            digest=self._hash.hexdigest(),
            errors=self.errors,
        )


def raw_stream_digest(blocks: List[bytes]) -> str:
    """Digest of ``blocks`` concatenated, comparable with ``SinkStats.digest``."""
    h = hashlib.blake2b(digest_size=16)
    for block in blocks:
        h.update(block)
    return h.hexdigest()


def _split_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host, int(port)


class SinkServer:
    """
    Long-running sink: receives frames on ``link`` and serves its counters.

    Frames are only counted and buffered while they arrive. Decompression
    and digesting wait for ``/result`` so they never overlap a timing window.

    Control API:
        GET  /stats   -> frame and byte counts since the last reset
        GET  /result  -> full SinkStats, reconstructing buffered frames first
        POST /reset   -> returns the full SinkStats, then clears everything
    """

    def __init__(self, link: LinkSpec, control_addr: str, codec: Codec):
        self.link = link
        self.control_addr = control_addr
        self.codec = codec
        self.pull: Optional[PullEndpoint] = None
        self._digest = StreamDigest()
        self._pending: List[Frame] = []
        self._frames = 0
        self._bytes = 0
        self._consumer: Optional[asyncio.Task] = None
        self._runner: Optional[web.AppRunner] = None

    async def start(self) -> None:
        self.pull = await bind_pull(self.link)
        self._consumer = asyncio.create_task(self._consume(), name="sink-consumer")

        app = web.Application()
        app.add_routes([
            web.get("/stats", self._handle_stats),
            web.get("/result", self._handle_result),
            web.post("/reset", self._handle_reset),
        ])
        self._runner = web.AppRunner(app, access_log=None)
        await self._runner.setup()
        host, port = _split_addr(self.control_addr)
        site = web.TCPSite(self._runner, host, port)
        try:
            await site.start()
        except OSError:
            await self._runner.cleanup()
            await self.pull.close()
            raise
        bound_host, bound_port = self._runner.addresses[0][:2]
        self.control_addr = f"{bound_host}:{bound_port}"
        logger.info(f"Sink ready: frames on {self.link.kind.value}:{self.pull.address}, control on http://{self.control_addr}")

    @property
    def address(self) -> str:
        return self.pull.address if self.pull else self.link.address

    def stats(self) -> SinkStats:
        """Arrival counts only; ``raw_bytes`` and ``digest`` stay empty until ``result``."""
        return SinkStats(frames=self._frames, bytes=self._bytes)

    def result(self) -> SinkStats:
        """Folds buffered frames into the digest and returns the full stats."""
        pending, self._pending = self._pending, []
        for frame in pending:
            self._digest.update(frame, self.codec)
        return self._digest.stats()

    def reset(self) -> SinkStats:
        final = self.result()
        self._digest = StreamDigest()
        self._frames = 0
        self._bytes = 0
        return final

    async def _consume(self) -> None:
        while True:
            try:
                frame = await self.pull.recv()
            except EndOfStream:
                return
            self._frames += 1
            self._bytes += frame.wire_size
            self._pending.append(frame)

    async def _handle_stats(self, request: web.Request) -> web.Response:
        return web.json_response(self.stats().model_dump())

    async def _handle_result(self, request: web.Request) -> web.Response:
        return web.json_response(self.result().model_dump())

    async def _handle_reset(self, request: web.Request) -> web.Response:
        final = self.reset()
        logger.debug(f"Counters reset after {final.frames} frames")
        return web.json_response(final.model_dump())

    async def stop(self) -> SinkStats:
        """Closes the link, drains frames already received, stops the control API."""
        if self.pull is not None:
            await self.pull.close()
        if self._consumer is not None:
            await self._consumer
        if self._runner is not None:
            await self._runner.cleanup()
        final = self.result()
        logger.info(f"Sink stopped after {final.frames} frames ({final.bytes} bytes)")
        return final

    async def serve_until(self, stop: asyncio.Event) -> SinkStats:
        await self.start()
        await stop.wait()
        return await self.stop()


class SinkClient:
    """
    Client for a ``SinkServer`` control API.

    Args:
        control_addr (str): ``host:port`` of the control API.
        max_retries (int): Maximum number of attempts per request.
        request_delay (float): Delay in seconds between attempts.
    """

    def __init__(self, control_addr: str, max_retries: int = 5, request_delay: float = 0.2):
        self.base_url = f"http://{control_addr}"
        self.max_retries = max_retries
        self.request_delay = request_delay
        self._session: Optional[aiohttp.ClientSession] = None

    async def _send_request(self, method: str, path: str) -> dict:
        """
        Sends a request to the control API, retrying on connection errors.

        Raises:
            SinkRequestError: If the request fails after retries.
        """
        if self._session is None:
            self._session = aiohttp.ClientSession()
        url = f"{self.base_url}{path}"
        retry = 0
        while retry < self.max_retries:
            try:
                async with self._session.request(method, url) as response:
                    if response.status == 200:
                        return await response.json()
                    logger.error(f"HTTP error {response.status}: {await response.text()} at retry {retry}")
            except aiohttp.ClientError as e:
                logger.error(f"Client error occurred: {e}")
            retry += 1
            await asyncio.sleep(self.request_delay)
        raise SinkRequestError(f"Failed to {method} {url} after {self.max_retries} retries.")

    async def stats(self) -> SinkStats:
        return SinkStats(**await self._send_request("GET", "/stats"))

    async def reset(self) -> SinkStats:
        return SinkStats(**await self._send_request("POST", "/reset"))

    async def result(self) -> SinkStats:
        return SinkStats(**await self._send_request("GET", "/result"))

    async def wait_for_frames(self, expected: int, timeout: float, poll_interval: float = 0.002) -> SinkStats:
        """Polls ``/stats`` until the sink has received ``expected`` frames."""
        deadline = time.monotonic() + timeout
        while True:
            stats = await self.stats()
            if stats.frames >= expected:
                return stats
            if time.monotonic() > deadline:
                raise TransportError(f"sink received {stats.frames} of {expected} frames within {timeout}s")
            await asyncio.sleep(poll_interval)

    async def close(self) -> None:
        if self._session is not None:
            await self._session.close()
            self._session = None

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc, tb):
        await self.close()


class LocalSink:
    """
    Pull endpoint in this process. Frames are only collected inside the
    timing window; decompression and digesting happen afterwards.
    """

    def __init__(self, link: LinkSpec):
        self.link = link
        self.pull: Optional[PullEndpoint] = None
        self._frames: List[Frame] = []
        self._task: Optional[asyncio.Task] = None

    async def open(self) -> LinkSpec:
        """Binds a fresh endpoint and returns the link the sensor should connect to."""
        address = self.link.address
        if self.link.kind is LinkKind.INPROC:
            address = f"{address}-{uuid.uuid4().hex[:8]}"
        self.pull = await bind_pull(self.link.model_copy(update={"address": address}))
        return self.link.model_copy(update={"address": self.pull.address})

    async def begin(self, expected: int) -> None:
        self._frames = []
        self._task = asyncio.create_task(self._collect(expected), name="local-sink")

    async def _collect(self, expected: int) -> None:
        for _ in range(expected):
            self._frames.append(await self.pull.recv())

    async def wait_drained(self, timeout: float) -> None:
        try:
            await asyncio.wait_for(self._task, timeout)
        except asyncio.TimeoutError:
            raise TransportError(
                f"sink received {len(self._frames)} frames before timing out after {timeout}s"
            ) from None

    async def result(self, codec: Codec) -> SinkStats:
        digest = StreamDigest()
        for frame in self._frames:
            digest.update(frame, codec)
        stats = digest.stats()
        if stats.bytes != self.pull.bytes_received:
            raise IntegrityError(f"sink counted {self.pull.bytes_received} bytes, frames hold {stats.bytes}")
        return stats

    async def abort(self) -> None:
        if self._task is not None and not self._task.done():
            self._task.cancel()

    async def close(self) -> None:
        await self.abort()
        if self.pull is not None:
            await self.pull.close()


class RemoteSink:
    """A ``serve`` instance reached over tcp, observed through its control API."""

    def __init__(self, link: LinkSpec, client: SinkClient):
        self.link = link
        self.client = client
        self._expected = 0

    async def open(self) -> LinkSpec:
        return self.link

    async def begin(self, expected: int) -> None:
        self._expected = expected
        await self.client.reset()

    async def wait_drained(self, timeout: float) -> None:
        await self.client.wait_for_frames(self._expected, timeout)

    async def result(self, codec: Codec) -> SinkStats:
        return await self.client.result()

    async def abort(self) -> None:
        pass

    async def close(self) -> None:
        pass
