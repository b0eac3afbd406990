class BenchError(Exception):
    """
    Base class for every error raised by the benchmark suite.
    """
    def __init__(self, message: str = "An error occurred in the benchmark suite."):
        super().__init__(message)


class ValidationError(BenchError):
    """
    Raised for invalid parameters or configuration values, such as a zero rate or an empty batch.
    """
    def __init__(self, message: str = "Data validation failed."):
        super().__init__(message)


class ParseError(ValidationError):
    """
    Raised when a line of a REDD text file does not match `<timestamp> <power>`.
    """
    def __init__(self, message: str = "Malformed reading.", line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class FramingError(BenchError):
    """
    Raised when a raw block does not have the length implied by its reading count.
    """
    def __init__(self, message: str = "Raw block length does not match the reading count."):
        super().__init__(message)


class CodecError(BenchError):
    """
    Base class for compression and decompression failures.
    """
    def __init__(self, message: str = "Codec failure."):
        super().__init__(message)


class InputTooLargeError(CodecError):
    """
    Raised when the input exceeds the 32-bit length cap of the block format.
    """
    def __init__(self, message: str = "Input exceeds the maximum block length."):
        super().__init__(message)


class CorruptionError(CodecError):
    """
    Raised when a compressed block is malformed.
    """
    def __init__(self, message: str = "Compressed block is corrupt."):
        super().__init__(message)


class TruncatedInputError(CorruptionError):
    """
    Raised when a block ends in the middle of a preamble, tag or element body.
    """
    def __init__(self, message: str = "Compressed block is truncated."):
        super().__init__(message)


class OffsetOutOfRangeError(CorruptionError):
    """
    Raised when a copy element points before the start of the output.
    """
    def __init__(self, message: str = "Copy offset is out of range."):
        super().__init__(message)


class LengthMismatchError(CorruptionError):
    """
    Raised when the decoded content disagrees with the length preamble.
    """
    def __init__(self, message: str = "Decoded length does not match the preamble."):
        super().__init__(message)


class TransportError(BenchError):
    """
    Base class for errors raised by push/pull endpoints.
    """
    def __init__(self, message: str = "Transport failure."):
        super().__init__(message)


class BindError(TransportError):
    """
    Raised when a pull endpoint cannot bind its address or channel name.
    """
    def __init__(self, message: str = "Address already in use."):
        super().__init__(message)


class ConnectError(TransportError):
    """
    Raised when a push endpoint exhausts its connect retry budget.
    """
    def __init__(self, message: str = "Could not connect to the sink."):
        super().__init__(message)


class BackpressureTimeout(TransportError):
    """
    Raised when the send queue stays full longer than the configured block timeout.
    """
    def __init__(self, message: str = "Send queue full; timed out waiting for space."):
        super().__init__(message)


class EndpointClosedError(TransportError):
    """
    Raised when an operation is attempted on a closed endpoint.
    """
    def __init__(self, message: str = "Endpoint is closed."):
        super().__init__(message)


class EndOfStream(TransportError):
    """
    Raised by recv when the endpoint is closed and every received frame has been drained.
    """
    def __init__(self, message: str = "End of stream."):
        super().__init__(message)


class ProtocolError(TransportError):
    """
    Raised when a peer sends a malformed frame; the offending connection is dropped.
    """
    def __init__(self, message: str = "Malformed frame received."):
        super().__init__(message)


class IntegrityError(BenchError):
    """
    Raised when the sink's reconstructed readings differ from the source readings.
    """
    def __init__(self, message: str = "Sink data does not match the source."):
        super().__init__(message)


class SinkRequestError(BenchError):
    """
    Raised when the sink control API cannot be reached after retries.
    """
    def __init__(self, message: str = "An error occurred during the sink control request."):
        super().__init__(message)
