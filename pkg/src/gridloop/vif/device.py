"""Loopback device pairs used in place of a tun device."""

from __future__ import annotations

import socket

DEVICE_BUFFER = 4 * 1024 * 1024
DEVICE_FD_ENV = "GRIDLOOP_DEVICE_FD"


def device_pair() -> tuple[socket.socket, socket.socket]:
    """(vif end, application end) of a packet-preserving socketpair."""
    a, b = socket.socketpair(socket.AF_UNIX, socket.SOCK_SEQPACKET)
    for s in (a, b):
        for opt in (socket.SO_SNDBUF, socket.SO_RCVBUF):
            try:
                s.setsockopt(socket.SOL_SOCKET, opt, DEVICE_BUFFER)
            except OSError:
                pass
    return a, b
