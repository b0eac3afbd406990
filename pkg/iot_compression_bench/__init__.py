"""
IoT Compression Bench

Lossless-compression telemetry benchmark: Snappy-block codec, framed
push/pull transport over a throttled link, timing harness and energy model.
"""

__version__ = "0.1.0"
