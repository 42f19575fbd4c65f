"""Reassembly of whole IP packets from an unaligned tunnel byte stream.

Packet boundaries come only from the IP header: bytes [2, 3] for IPv4,
40 + bytes [4, 5] for IPv6.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

MAX_PENDING = 128 * 1024
MIN_PACKET = 20
MAX_PACKET = 65535


class NeedMore(NamedTuple):
    missing: int


class BadVersion(NamedTuple):
    version: int


def packet_len_from_header(data: bytes | bytearray | memoryview) -> int | NeedMore | BadVersion:
    """Total packet length declared by the header at the start of ``data``."""
    if not data:
        return NeedMore(1)
    version = data[0] >> 4
    if version == 4:
        if len(data) < 4:
            return NeedMore(4 - len(data))
        return struct.unpack_from("!H", data, 2)[0]
    if version == 6:
        if len(data) < 6:
            return NeedMore(6 - len(data))
        return 40 + struct.unpack_from("!H", data, 4)[0]
    return BadVersion(version)


def _plausible(data: bytearray) -> bool | None:
    """Could a packet start here? None while too few bytes to tell."""
    result = packet_len_from_header(data)
    if isinstance(result, NeedMore):
        return None
    if isinstance(result, BadVersion):
        return False
    if data[0] >> 4 == 4 and (data[0] & 0x0F) < 5:
        return False
    return MIN_PACKET <= result <= MAX_PACKET


class FrameBuffer:
    """Turns tunnel chunks back into packets.

    On a header that cannot start a packet the buffer counts a desync and
    scans forward byte by byte to the next plausible header.
    """

    def __init__(self) -> None:
        self.pending = bytearray()
        self.expected_len: int | None = None
        self.desyncs = 0
        self.packets = 0
        self._scanning = False

    def feed(self, chunk: bytes) -> list[bytes]:
        if len(self.pending) + len(chunk) > MAX_PENDING:
            self.desyncs += 1
            self.pending.clear()
            self.expected_len = None
            self._scanning = True
        self.pending += chunk
        out = []
        while self.pending:
            if self.expected_len is None:
                ok = _plausible(self.pending)
                if ok is None:
                    break
                if not ok:
                    if not self._scanning:
                        self.desyncs += 1
                        self._scanning = True
                    del self.pending[0]
                    continue
                self._scanning = False
                self.expected_len = packet_len_from_header(self.pending)
            if len(self.pending) < self.expected_len:
                break
            out.append(bytes(self.pending[: self.expected_len]))
            del self.pending[: self.expected_len]
            self.expected_len = None
        self.packets += len(out)
        return out
