BYTES_PER_READING = 16

# Snappy raw block format
TAG_LITERAL = 0x00
TAG_COPY_1 = 0x01
TAG_COPY_2 = 0x02
TAG_COPY_4 = 0x03
BLOCK_SIZE = 1 << 16
HASH_TABLE_SIZE = 1 << 14
INPUT_MARGIN_BYTES = 15
MAX_BLOCK_LENGTH = (1 << 32) - 1

# 250 Mbit/s as printed; 250 MB/s as claimed upstream
THROUGHPUT_FLOOR_BITS = 250_000_000
STRICT_THROUGHPUT_FLOOR_BITS = 250_000_000 * 8

# Framing: [u32 LE length][u8 flags][payload]
FRAME_HEADER_SIZE = 5
FLAG_COMPRESSED = 0x01
DEFAULT_MAX_FRAME_SIZE = 16 * 1024 * 1024

DEFAULT_RATE_BITS_PER_S = 100_000_000
DEFAULT_QUEUE_CAPACITY = 64
DEFAULT_SEND_TIMEOUT = 30.0
THROTTLE_GRANULARITY = 0.001
DEFAULT_CONNECT_RETRIES = 20
DEFAULT_CONNECT_DELAY = 0.05
# A closing tcp pull endpoint reads until no bytes arrive for CLOSE_DRAIN_QUIET
CLOSE_DRAIN_QUIET = 0.02
CLOSE_DRAIN_TIMEOUT = 5.0
DEFAULT_ADDR = "127.0.0.1:5557"
DEFAULT_CONTROL_ADDR = "127.0.0.1:5558"

DEFAULT_BATCH_SIZES = [1000, 200, 100, 20]
DEFAULT_REPETITIONS = 3
DEFAULT_TUPLES = 100_000
DEFAULT_SEED = 7
# Native-backed by default; the pure block codec stays selectable by name
DEFAULT_CODEC = "snappy-cramjam"
PURE_CODEC = "snappy"

# First timestamp of REDD house 1, channel 1
REDD_START_TIMESTAMP = 1303132930

# Energy model
DEFAULT_TX_COST_PER_BIT = 480
DEFAULT_INSTRUCTIONS_PER_BYTE = 10

CSV_HEADER = "batch_size,mode,repetitions,elapsed_s,raw_bytes,wire_bytes,compression_ratio"
CSV_ENERGY_HEADER = "net_savings_units,worthwhile"

# Seconds on a Raspberry Pi 3 over a 100 Mbps wired link, per batch size:
# (compress + transmit, pre-compressed transmit, raw transmit)
REFERENCE_TIMINGS = {
    1000: (93, 1, 48),
    200: (261, 1, 20),
    100: (501, 2, 6),
    20: (1878, 9, 3),
}

ENV_PREFIX = "ICB_"
