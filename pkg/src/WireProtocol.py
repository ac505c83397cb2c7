"""Wire format of the device/edge co-inference protocol and the in-process bandwidth shaper.

Frame: [4-byte big-endian payload length][1-byte type][payload]. The length counts
payload bytes only. See docs/protocol.md for the payload layouts.
"""

import asyncio
import json
import struct
import time
from enum import IntEnum
from typing import Callable, Dict, Literal, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .exceptions import FrameTooLargeException, MalformedFrameException

HEADER = struct.Struct(">IB")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD_BYTES = 64 * 1024 * 1024

BUCKET_CAPACITY_BYTES = 32 * 1024
CHUNK_BYTES = 4 * 1024
PROBE_BYTES = 256 * 1024

_RANK = struct.Struct("<I")
_LAYER_INDEX = struct.Struct(">I")
_RESULT = struct.Struct(">Id")
_ERROR_CODE = struct.Struct(">H")
_PROBE_REPLY = struct.Struct(">Q")


class MessageType(IntEnum):
    HELLO = 0x01
    INPUT = 0x02
    INTERMEDIATE = 0x03
    RESULT = 0x04
    TIMING = 0x05
    PROBE = 0x06
    ERROR = 0x7F


class ErrorCode(IntEnum):
    FRAME_TOO_LARGE = 1
    MALFORMED_FRAME = 2
    UNKNOWN_TYPE = 3
    PLAN_MISMATCH = 4
    UNEXPECTED_MESSAGE = 5
    MODE_MISMATCH = 6
    INTERNAL = 7


class Frame(NamedTuple):
    """A decoded frame; `type` stays a raw int so unknown types can be reported."""

    type: int
    payload: bytes

    def known_type(self) -> Optional[MessageType]:
        try:
            return MessageType(self.type)
        except ValueError:
            return None


class Hello(BaseModel):
    """Session opener: which plan the device wants the edge to run."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    model: str
    exit_index: int = Field(alias="exit")
    partition: int
    mode: Literal["kernels", "delay"]


def encode_frame(message_type: int, payload: bytes = b"") -> bytes:
    """
    Frame a payload.

    Raises:
        FrameTooLargeException: If the payload exceeds the 64 MiB limit
    """
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise FrameTooLargeException(len(payload), MAX_PAYLOAD_BYTES)
    return HEADER.pack(len(payload), int(message_type)) + payload


async def read_frame(reader: asyncio.StreamReader, limit: int = MAX_PAYLOAD_BYTES) -> Optional[Frame]:
    """
    Read one frame.

    Returns:
        The frame, or None when the peer closed the stream cleanly between frames

    Raises:
        FrameTooLargeException: If the header declares more than `limit` bytes
        MalformedFrameException: If the stream ends inside a frame
    """
    try:
        header = await reader.readexactly(HEADER_SIZE)
    except asyncio.IncompleteReadError as e:
        if not e.partial:
            return None
        raise MalformedFrameException(f"stream ended after {len(e.partial)} header byte(s)") from e

    length, message_type = HEADER.unpack(header)
    if length > limit:
        raise FrameTooLargeException(length, limit)
    try:
        payload = await reader.readexactly(length) if length else b""
    except asyncio.IncompleteReadError as e:
        raise MalformedFrameException(f"stream ended after {len(e.partial)} of {length} payload byte(s)") from e
    return Frame(message_type, payload)


def encode_tensor(tensor: np.ndarray) -> bytes:
    """Rank, dims (little-endian u32) then little-endian float32 data."""
    array = np.ascontiguousarray(tensor, dtype="<f4")
    return (
        _RANK.pack(array.ndim)
        + struct.pack(f"<{array.ndim}I", *array.shape)
        + array.tobytes()
    )


def decode_tensor(payload: bytes) -> np.ndarray:
    """
    Inverse of encode_tensor; the result owns its memory.

    Raises:
        MalformedFrameException: If the header and data length disagree
    """
    if len(payload) < _RANK.size:
        raise MalformedFrameException("tensor payload shorter than its rank field")
    (rank,) = _RANK.unpack_from(payload)
    data_start = _RANK.size + 4 * rank
    if len(payload) < data_start:
        raise MalformedFrameException(f"tensor payload too short for {rank} dimension(s)")
    shape = struct.unpack_from(f"<{rank}I", payload, _RANK.size)
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(payload) - data_start != expected:
        raise MalformedFrameException(
            f"tensor of shape {shape} needs {expected} data bytes, got {len(payload) - data_start}"
        )
    data = np.frombuffer(payload, dtype="<f4", offset=data_start).reshape(shape)
    return data.astype(np.float32).copy()


def encode_hello(hello: Hello) -> bytes:
    return hello.model_dump_json(by_alias=True).encode("utf-8")


def decode_hello(payload: bytes) -> Hello:
    """
    Raises:
        MalformedFrameException: If the payload is not a valid HELLO document
    """
    try:
        return Hello.model_validate_json(payload)
    except ValidationError as e:
        raise MalformedFrameException(f"invalid HELLO: {e.errors()[0]['msg']}") from e


def encode_intermediate(layer_index: int, tensor: np.ndarray) -> bytes:
    return _LAYER_INDEX.pack(layer_index) + encode_tensor(tensor)


def decode_intermediate(payload: bytes) -> Tuple[int, np.ndarray]:
    if len(payload) < _LAYER_INDEX.size:
        raise MalformedFrameException("INTERMEDIATE payload has no layer index")
    (layer_index,) = _LAYER_INDEX.unpack_from(payload)
    return layer_index, decode_tensor(payload[_LAYER_INDEX.size:])


def encode_result(class_index: int, confidence: float) -> bytes:
    return _RESULT.pack(class_index, confidence)


def decode_result(payload: bytes) -> Tuple[int, float]:
    if len(payload) != _RESULT.size:
        raise MalformedFrameException(f"RESULT payload must be {_RESULT.size} bytes, got {len(payload)}")
    return _RESULT.unpack(payload)


def encode_timing(timings: Dict[str, float]) -> bytes:
    return json.dumps(timings, sort_keys=True).encode("utf-8")


def decode_timing(payload: bytes) -> Dict[str, float]:
    try:
        document = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedFrameException(f"invalid TIMING: {e}") from e
    if not isinstance(document, dict):
        raise MalformedFrameException("TIMING payload must be an object")
    return {str(key): float(value) for key, value in document.items()}


def encode_error(code: int, message: str) -> bytes:
    return _ERROR_CODE.pack(int(code)) + message.encode("utf-8")


def decode_error(payload: bytes) -> Tuple[int, str]:
    if len(payload) < _ERROR_CODE.size:
        raise MalformedFrameException("ERROR payload has no code")
    (code,) = _ERROR_CODE.unpack_from(payload)
    return code, payload[_ERROR_CODE.size:].decode("utf-8", errors="replace")


def encode_probe_reply(received_bytes: int) -> bytes:
    return _PROBE_REPLY.pack(received_bytes)


def decode_probe_reply(payload: bytes) -> int:
    if len(payload) != _PROBE_REPLY.size:
        raise MalformedFrameException(f"PROBE reply must be {_PROBE_REPLY.size} bytes, got {len(payload)}")
    return _PROBE_REPLY.unpack(payload)[0]


class TokenBucket:
    """Byte-granular token bucket.

    Tokens accrue at rate_bps / 8 bytes per second up to `capacity` and the bucket
    starts empty. A reservation larger than the balance runs the balance negative and
    reports how long the caller must wait for it to return to zero.
    """

    def __init__(
        self,
        rate_bps: float,
        capacity: int = BUCKET_CAPACITY_BYTES,
        clock: Callable[[], float] = time.monotonic
    ) -> None:
        if rate_bps <= 0:
            raise ValueError(f"rate must be > 0, got {rate_bps}")
        self.rate_bps = rate_bps
        self.bytes_per_second = rate_bps / 8.0
        self.capacity = capacity
        self._clock = clock
        self._tokens = 0.0
        self._last = clock()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(float(self.capacity), self._tokens + (now - self._last) * self.bytes_per_second)
        self._last = now

    @property
    def tokens(self) -> float:
        self._refill()
        return self._tokens

    def reserve(self, nbytes: int) -> float:
        """Take `nbytes` tokens; returns the seconds to wait before sending them."""
        self._refill()
        self._tokens -= nbytes
        return max(0.0, -self._tokens / self.bytes_per_second)

    async def consume(self, nbytes: int) -> None:
        delay = self.reserve(nbytes)
        if delay > 0:
            await asyncio.sleep(delay)


class ShapedWriter:
    """Frame writer over an asyncio StreamWriter, paced by a per-connection TokenBucket."""

    def __init__(self, writer: asyncio.StreamWriter, rate_bps: Optional[float] = None) -> None:
        self.writer = writer
        self.bucket = TokenBucket(rate_bps) if rate_bps else None
        self.bytes_sent = 0

    async def send(self, data: bytes) -> None:
        if self.bucket is None:
            self.writer.write(data)
        else:
            view = memoryview(data)
            for start in range(0, len(view), CHUNK_BYTES):
                chunk = view[start:start + CHUNK_BYTES]
                await self.bucket.consume(len(chunk))
                self.writer.write(bytes(chunk))
                await self.writer.drain()
        await self.writer.drain()
        self.bytes_sent += len(data)

    async def send_frame(self, message_type: int, payload: bytes = b"") -> None:
        await self.send(encode_frame(message_type, payload))

    async def send_error(self, code: ErrorCode, message: str) -> None:
        await self.send_frame(MessageType.ERROR, encode_error(code, message))

    async def close(self) -> None:
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass


def shape(writer: asyncio.StreamWriter, rate_bps: Optional[float]) -> ShapedWriter:
    """Wrap a transport; rate None (or infinite) is a passthrough."""
    if rate_bps is not None and rate_bps == float("inf"):
        rate_bps = None
    return ShapedWriter(writer, rate_bps)
