"""Tunnel sockets and the datagram-only check.

Tunnelling TCP inside TCP stacks two congestion controllers on top of each
other and stalls the application, so the vif <-> vif-sim path is UDP only.
Every tunnel socket is created here, and ``assert_datagram_only`` inspects
live processes to prove no stream connection exists between the two.
"""

from __future__ import annotations

import socket

MAX_DATAGRAM = 65507
SOCKET_BUFFER = 4 * 1024 * 1024


class TransportViolation(AssertionError):
    pass


def open_tunnel_socket(bind: tuple[str, int] = ("127.0.0.1", 0)) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    if sock.type != socket.SOCK_DGRAM:
        raise TransportViolation("tunnel socket is not a datagram socket")
    for opt in (socket.SO_RCVBUF, socket.SO_SNDBUF):
        try:
            sock.setsockopt(socket.SOL_SOCKET, opt, SOCKET_BUFFER)
        except OSError:
            pass
    sock.bind(bind)
    sock.setblocking(False)
    return sock


def tcp_connections(pid: int) -> list:
    import psutil

    proc = psutil.Process(pid)
    getter = getattr(proc, "net_connections", None) or proc.connections
    return getter(kind="tcp")


def assert_datagram_only(vif_pids, vifsim_pids=(), kernel_port: int | None = None) -> None:
    """Raise if a vif holds any TCP socket, or a vif-sim one not toward the kernel."""
    import psutil

    for pid in vif_pids:
        try:
            conns = tcp_connections(pid)
        except psutil.NoSuchProcess:
            continue
        if conns:
            raise TransportViolation(f"vif pid {pid} has stream sockets: {conns}")
    for pid in vifsim_pids:
        try:
            conns = tcp_connections(pid)
        except psutil.NoSuchProcess:
            continue
        for c in conns:
            peer_port = c.raddr.port if c.raddr else None
            if c.status == psutil.CONN_LISTEN or (kernel_port is not None and peer_port != kernel_port):
                raise TransportViolation(f"vif-sim pid {pid} has a stream socket not toward the kernel: {c}")
