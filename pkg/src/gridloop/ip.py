"""Minimal IPv4/IPv6, ICMP and UDP helpers (stdlib only).

Used by the network simulator to parse packets, by vif-sim for clock
packets, and by the bundled test applications, which run their own tiny
userspace stack on the loopback device.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass

PROTO_ICMP = 1
PROTO_UDP = 17
ICMP_ECHO_REPLY = 0
ICMP_ECHO_REQUEST = 8

IPV4_HEADER = struct.Struct("!BBHHHBBH4s4s")
UDP_HEADER = struct.Struct("!HHHH")
ICMP_ECHO = struct.Struct("!BBHHH")


class MalformedPacket(ValueError):
    pass


def checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


@dataclass(frozen=True)
class IpHeader:
    version: int
    src: str
    dst: str
    total_length: int
    protocol: int
    header_length: int


def parse_header(data: bytes) -> IpHeader:
    """Parse the IP header; the declared length must match ``len(data)``."""
    if not data:
        raise MalformedPacket("empty packet")
    version = data[0] >> 4
    if version == 4:
        if len(data) < 20:
            raise MalformedPacket(f"IPv4 packet of {len(data)} bytes is shorter than its header")
        ihl = (data[0] & 0x0F) * 4
        total = struct.unpack_from("!H", data, 2)[0]
        if ihl < 20 or total < ihl:
            raise MalformedPacket(f"bad IPv4 header lengths ihl={ihl} total={total}")
        src = str(ipaddress.IPv4Address(data[12:16]))
        dst = str(ipaddress.IPv4Address(data[16:20]))
        proto, hlen = data[9], ihl
    elif version == 6:
        if len(data) < 40:
            raise MalformedPacket(f"IPv6 packet of {len(data)} bytes is shorter than its header")
        total = 40 + struct.unpack_from("!H", data, 4)[0]
        src = str(ipaddress.IPv6Address(data[8:24]))
        dst = str(ipaddress.IPv6Address(data[24:40]))
        proto, hlen = data[6], 40
    else:
        raise MalformedPacket(f"unknown IP version {version}")
    if total != len(data):
        raise MalformedPacket(f"header declares {total} bytes, packet has {len(data)}")
    return IpHeader(version, src, dst, total, proto, hlen)


def ipv4_packet(src: str, dst: str, protocol: int, payload: bytes, ident: int = 0, ttl: int = 64) -> bytes:
    total = 20 + len(payload)
    if total > 0xFFFF:
        raise ValueError(f"IPv4 packet of {total} bytes too large")
    header = IPV4_HEADER.pack(
        0x45, 0, total, ident & 0xFFFF, 0, ttl, protocol, 0,
        ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed,
    )
    csum = checksum(header)
    return header[:10] + struct.pack("!H", csum) + header[12:] + payload


def ipv6_packet(src: str, dst: str, next_header: int, payload: bytes, hop_limit: int = 64) -> bytes:
    if len(payload) > 0xFFFF:
        raise ValueError("IPv6 payload too large")
    header = struct.pack("!IHBB", 6 << 28, len(payload), next_header, hop_limit)
    return header + ipaddress.IPv6Address(src).packed + ipaddress.IPv6Address(dst).packed + payload


def icmp_echo(src: str, dst: str, ident: int, seq: int, data: bytes = b"", reply: bool = False) -> bytes:
    kind = ICMP_ECHO_REPLY if reply else ICMP_ECHO_REQUEST
    body = ICMP_ECHO.pack(kind, 0, 0, ident & 0xFFFF, seq & 0xFFFF) + data
    body = body[:2] + struct.pack("!H", checksum(body)) + body[4:]
    return ipv4_packet(src, dst, PROTO_ICMP, body, ident=seq)


@dataclass(frozen=True)
class IcmpEcho:
    src: str
    dst: str
    reply: bool
    ident: int
    seq: int
    data: bytes


def parse_icmp_echo(packet: bytes) -> IcmpEcho | None:
    """Decode an IPv4 ICMP echo request/reply, or None for anything else."""
    try:
        hdr = parse_header(packet)
    except MalformedPacket:
        return None
    if hdr.version != 4 or hdr.protocol != PROTO_ICMP or len(packet) < hdr.header_length + 8:
        return None
    kind, _code, _csum, ident, seq = ICMP_ECHO.unpack_from(packet, hdr.header_length)
    if kind not in (ICMP_ECHO_REQUEST, ICMP_ECHO_REPLY):
        return None
    return IcmpEcho(hdr.src, hdr.dst, kind == ICMP_ECHO_REPLY, ident, seq, packet[hdr.header_length + 8:])


def udp_packet(src: str, dst: str, sport: int, dport: int, payload: bytes, ident: int = 0) -> bytes:
    # UDP checksum 0 = not computed, legal for IPv4.
    seg = UDP_HEADER.pack(sport, dport, 8 + len(payload), 0) + payload
    return ipv4_packet(src, dst, PROTO_UDP, seg, ident=ident)


@dataclass(frozen=True)
class UdpDatagram:
    src: str
    dst: str
    sport: int
    dport: int
    payload: bytes


def parse_udp(packet: bytes) -> UdpDatagram | None:
    try:
        hdr = parse_header(packet)
    except MalformedPacket:
        return None
    if hdr.version != 4 or hdr.protocol != PROTO_UDP or len(packet) < hdr.header_length + 8:
        return None
    sport, dport, length, _ = UDP_HEADER.unpack_from(packet, hdr.header_length)
    start = hdr.header_length + 8
    return UdpDatagram(hdr.src, hdr.dst, sport, dport, packet[start:hdr.header_length + length])
