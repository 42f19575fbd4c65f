"""Framed request/reply protocol spoken between the kernel and external simulators.

Frame format::

    +-----------+---------------------------------------------+
    | len (4B)  | UTF-8 JSON body: [kind, request_id, payload] |
    | u32 BE    |                                             |
    +-----------+---------------------------------------------+

``len`` counts the body only. ``kind`` is 0 (request), 1 (success) or
2 (error). A request payload is ``[method, args, kwargs]``, a success payload
is the method's result and an error payload is a message string.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from typing import Any, NamedTuple

LENGTH_PREFIX = struct.Struct(">I")
HEADER_SIZE = LENGTH_PREFIX.size
MAX_FRAME_SIZE = 16 * 1024 * 1024


class ProtocolError(Exception):
    """Raised for oversized frames and malformed bodies."""


class MsgKind(enum.IntEnum):
    REQUEST = 0
    SUCCESS = 1
    ERROR = 2


@dataclass(frozen=True)
class WireMessage:
    kind: MsgKind
    request_id: int
    payload: Any

    @classmethod
    def request(cls, request_id: int, method: str, args=(), kwargs=None) -> WireMessage:
        return cls(MsgKind.REQUEST, request_id, [method, list(args), dict(kwargs or {})])

    @classmethod
    def success(cls, request_id: int, result: Any) -> WireMessage:
        return cls(MsgKind.SUCCESS, request_id, result)

    @classmethod
    def error(cls, request_id: int, message: str) -> WireMessage:
        return cls(MsgKind.ERROR, request_id, message)


class NeedMore(NamedTuple):
    """Returned instead of a message when the buffer holds an incomplete frame."""

    missing: int


def encode_message(msg: WireMessage) -> bytes:
    if msg.request_id < 0:
        raise ProtocolError(f"request_id must be unsigned, got {msg.request_id}")
    try:
        body = json.dumps(
            [int(msg.kind), msg.request_id, msg.payload],
            separators=(",", ":"),
            ensure_ascii=False,
            allow_nan=False,
        ).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"payload not serializable: {exc}") from exc
    if len(body) > MAX_FRAME_SIZE:
        raise ProtocolError(f"frame of {len(body)} bytes exceeds {MAX_FRAME_SIZE}")
    return LENGTH_PREFIX.pack(len(body)) + body


def _parse_body(body: bytes) -> WireMessage:
    try:
        decoded = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"malformed body: {exc}") from exc
    if not isinstance(decoded, list) or len(decoded) != 3:
        raise ProtocolError("body must be a 3-element array")
    kind, request_id, payload = decoded
    if type(request_id) is not int or request_id < 0:
        raise ProtocolError(f"bad request id {request_id!r}")
    try:
        kind = MsgKind(kind)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind!r}") from None
    if kind is MsgKind.REQUEST and not (
        isinstance(payload, list)
        and len(payload) == 3
        and isinstance(payload[0], str)
        and isinstance(payload[1], list)
        and isinstance(payload[2], dict)
    ):
        raise ProtocolError("request payload must be [method, args, kwargs]")
    if kind is MsgKind.ERROR and not isinstance(payload, str):
        raise ProtocolError("error payload must be a string")
    return WireMessage(kind, request_id, payload)


def _frame_length(buf: bytes | bytearray | memoryview) -> int | None:
    if len(buf) < HEADER_SIZE:
        return None
    (length,) = LENGTH_PREFIX.unpack_from(buf)
    if length > MAX_FRAME_SIZE:
        raise ProtocolError(f"frame length {length} exceeds {MAX_FRAME_SIZE}")
    return length


def decode_message(data: bytes) -> WireMessage | NeedMore:
    """Decode exactly one frame.

    A truncated frame yields ``NeedMore`` rather than an error; trailing bytes
    after the frame are a protocol error (use ``StreamDecoder`` for streams).
    """
    length = _frame_length(data)
    if length is None:
        return NeedMore(HEADER_SIZE - len(data))
    end = HEADER_SIZE + length
    if len(data) < end:
        return NeedMore(end - len(data))
    if len(data) > end:
        raise ProtocolError(f"{len(data) - end} trailing bytes after frame")
    return _parse_body(bytes(data[HEADER_SIZE:end]))


class StreamDecoder:
    """Incremental decoder for a byte stream carrying back-to-back frames."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[WireMessage]:
        self._buf += data
        out = []
        while True:
            length = _frame_length(self._buf)
            if length is None or len(self._buf) < HEADER_SIZE + length:
                break
            end = HEADER_SIZE + length
            body = bytes(self._buf[HEADER_SIZE:end])
            del self._buf[:end]
            out.append(_parse_body(body))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)
