"""Base64 packing of raw packets for the co-simulation protocol."""

from __future__ import annotations

import base64
import binascii

from gridloop.kernel.protocol import ProtocolError


def encode_packets_b64(packets) -> list[str]:
    return [base64.b64encode(bytes(p)).decode("ascii") for p in packets]


def decode_packets_b64(strings) -> list[bytes]:
    out = []
    for i, s in enumerate(strings):
        if not isinstance(s, str):
            raise ProtocolError(f"packet {i}: expected a Base64 string, got {type(s).__name__}")
        try:
            out.append(base64.b64decode(s, validate=True))
        except (binascii.Error, ValueError) as exc:
            raise ProtocolError(f"packet {i}: invalid Base64 ({exc})") from exc
    return out
