"""Simulation clock packets for lockstep ("clocked") containers.

A clocked application is told the simulation time by vif-sim through an
ordinary UDP packet (a *tick*) that follows the packets delivered in the
same step. It answers with a *tock* once it has emitted everything it wants
to send for that step, carrying its next wake-up time (-1 = only wake me on
traffic). vif-sim swallows tocks; they never enter the network model.

The clock address sits in the unallocated 10.112.0.0/12 block, so it can
never collide with a modeled node.
"""

from __future__ import annotations

import struct

from gridloop import ip as iplib

CLOCK_IP = "10.127.255.254"
CLOCK_PORT = 4719
READY = -1
NO_WAKE = -1

_TICK = struct.Struct("!q")
_TOCK = struct.Struct("!qq")


def tick_packet(app_ip: str, t: int) -> bytes:
    return iplib.udp_packet(CLOCK_IP, app_ip, CLOCK_PORT, CLOCK_PORT, _TICK.pack(t))


def tock_packet(app_ip: str, t: int, next_wake: int = NO_WAKE) -> bytes:
    return iplib.udp_packet(app_ip, CLOCK_IP, CLOCK_PORT, CLOCK_PORT, _TOCK.pack(t, next_wake))


def parse_tick(packet: bytes) -> int | None:
    dgram = iplib.parse_udp(packet)
    if dgram is None or dgram.src != CLOCK_IP or dgram.dport != CLOCK_PORT or len(dgram.payload) != _TICK.size:
        return None
    return _TICK.unpack(dgram.payload)[0]


def parse_tock(packet: bytes) -> tuple[str, int, int] | None:
    """(app ip, t, next_wake) for a tock, otherwise None."""
    if len(packet) < 20 or packet[0] >> 4 != 4 or packet[16:20] != bytes([10, 127, 255, 254]):
        return None
    dgram = iplib.parse_udp(packet)
    if dgram is None or dgram.dport != CLOCK_PORT or len(dgram.payload) != _TOCK.size:
        return None
    t, next_wake = _TOCK.unpack(dgram.payload)
    return dgram.src, t, next_wake
