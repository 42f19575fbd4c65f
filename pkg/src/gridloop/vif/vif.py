"""vif: the bridge running beside an unmodified application.

Everything the application sends through its network device is tunnelled
as raw bytes over UDP to vif-sim; everything vif-sim sends back is written
to the device. Until vif-sim answers, outbound packets are held in a
bounded buffer (oldest dropped first), and bursts of zero-length hello
datagrams announce the container.
"""

from __future__ import annotations

import argparse
import logging
import os
import selectors
import signal
import socket
import sys
import time
from collections import deque
from dataclasses import dataclass

from gridloop.kernel.remote import parse_endpoint
from gridloop.vif.device import DEVICE_FD_ENV
from gridloop.vif.transport import MAX_DATAGRAM, TransportViolation, open_tunnel_socket

log = logging.getLogger("gridloop.vif")

HELLO = b""
DEFAULT_BUFFER_LIMIT = 4 * 1024 * 1024


@dataclass
class HelloBurst:
    count: int = 5
    interval_ms: int = 100
    retry_ms: int = 1000

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("a hello burst needs at least one datagram")


@dataclass
class VifConfig:
    peer: tuple[str, int]
    transport: str = "loopback"
    buffer_limit: int = DEFAULT_BUFFER_LIMIT
    device_fd: int | None = None
    tun_name: str = "tun0"
    tun_address: str | None = None
    tunnel_fd: int | None = None  # UDP socket inherited from another network namespace
    ready_fd: int | None = None  # written to and closed once the device is up
    bind: tuple[str, int] = ("127.0.0.1", 0)
    hello: HelloBurst = None

    def __post_init__(self):
        if self.transport not in ("tun", "loopback"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.hello is None:
            self.hello = HelloBurst()


class VifCore:
    """Buffering and announce logic, free of I/O. Times are in seconds."""

    def __init__(self, buffer_limit: int = DEFAULT_BUFFER_LIMIT, hello: HelloBurst | None = None,
                 max_datagram: int = MAX_DATAGRAM) -> None:
        self.buffer_limit = buffer_limit
        self.hello = hello or HelloBurst()
        self.max_datagram = max_datagram
        self.live = False
        self.buffer: deque[bytes] = deque()
        self.buffered_bytes = 0
        self.dropped_packets = 0
        self.hellos_sent = 0
        self.bursts = 0
        self._due: deque[float] = deque()
        self._next_burst: float | None = None

    def start(self, now: float) -> None:
        self._schedule_burst(now)

    def _schedule_burst(self, now: float) -> None:
        step = self.hello.interval_ms / 1000
        self._due = deque(now + i * step for i in range(self.hello.count))
        self._next_burst = now + (self.hello.count - 1) * step + self.hello.retry_ms / 1000
        self.bursts += 1

    def next_deadline(self) -> float | None:
        if self.live:
            return None
        if self._due:
            return self._due[0]
        return self._next_burst

    def poll(self, now: float) -> list[bytes]:
        """Hello datagrams due at ``now``."""
        if self.live:
            return []
        if not self._due and self._next_burst is not None and now >= self._next_burst:
            self._schedule_burst(now)
        out = []
        while self._due and self._due[0] <= now:
            self._due.popleft()
            out.append(HELLO)
        self.hellos_sent += len(out)
        return out

    def _chunks(self, data: bytes) -> list[bytes]:
        return [data[i:i + self.max_datagram] for i in range(0, len(data), self.max_datagram)] or []

    def from_device(self, packet: bytes) -> list[bytes]:
        if self.live:
            return self._chunks(packet)
        self.buffer.append(packet)
        self.buffered_bytes += len(packet)
        while self.buffered_bytes > self.buffer_limit and self.buffer:
            old = self.buffer.popleft()
            self.buffered_bytes -= len(old)
            self.dropped_packets += 1
        return []

    def from_peer(self, data: bytes) -> tuple[list[bytes], bytes | None]:
        """Handle a datagram from vif-sim: (datagrams to flush, packet for the device)."""
        flush = []
        if not self.live:
            self.live = True
            self._due.clear()
            # Buffered packets go out back to back, coalesced into as few
            # datagrams as fit; vif-sim reassembles from the IP headers.
            stream = b"".join(self.buffer)
            self.buffer.clear()
            self.buffered_bytes = 0
            flush = self._chunks(stream)
        return flush, (data or None)


class _Stop(Exception):
    pass


def _raise_stop(*_):
    raise _Stop


class LoopbackDevice:
    """Packet socket (one end of a socketpair) standing in for the tun device.

    SOCK_SEQPACKET is preferred: it keeps packet boundaries like a tun
    device and reports the application's exit as EOF.
    """

    def __init__(self, fd: int) -> None:
        self.sock = socket.socket(fileno=fd)
        if self.sock.type not in (socket.SOCK_SEQPACKET, socket.SOCK_DGRAM):
            raise ValueError("loopback device must be a packet socket")

    def fileno(self) -> int:
        return self.sock.fileno()

    def read(self) -> bytes | None:
        try:
            return self.sock.recv(65536, socket.MSG_DONTWAIT)
        except BlockingIOError:
            return None
        except ConnectionResetError:
            return b""

    def write(self, packet: bytes) -> None:
        self.sock.send(packet, socket.MSG_DONTWAIT)

    def close(self) -> None:
        self.sock.close()


def open_device(config: VifConfig):
    if config.transport == "loopback":
        fd = config.device_fd
        if fd is None:
            fd = int(os.environ[DEVICE_FD_ENV])
        return LoopbackDevice(fd)
    from gridloop.vif.tun import TunDevice

    return TunDevice.create(config.tun_name, config.tun_address)


def _signal_ready(fd: int | None) -> None:
    if fd is None:
        return
    try:
        os.write(fd, b"1")
    finally:
        os.close(fd)


def vif_run(config: VifConfig, stop_after: float | None = None) -> VifCore:
    """Run until SIGTERM/SIGINT (or ``stop_after`` seconds). Returns final state."""
    device = open_device(config)
    if config.tunnel_fd is not None:
        udp = socket.socket(fileno=config.tunnel_fd)
        if udp.type != socket.SOCK_DGRAM:
            udp.close()
            device.close()
            raise TransportViolation("tunnel socket is not a datagram socket")
        udp.setblocking(False)
    else:
        udp = open_tunnel_socket(config.bind)
    peer = (socket.gethostbyname(config.peer[0]), config.peer[1])
    core = VifCore(config.buffer_limit, config.hello)
    sel = selectors.DefaultSelector()
    sel.register(device, selectors.EVENT_READ, "device")
    sel.register(udp, selectors.EVENT_READ, "udp")
    stopping = []
    signal.signal(signal.SIGTERM, _raise_stop)
    _signal_ready(config.ready_fd)
    started = time.monotonic()
    core.start(started)

    def send(datagrams):
        for d in datagrams:
            try:
                udp.sendto(d, peer)
            except OSError as exc:
                log.debug("send to %s failed: %s", peer, exc)

    # Packets for the device wait here while the application is not
    # reading; vif itself never blocks on the device.
    to_device: deque[bytes] = deque()

    def drain_device():
        while to_device:
            try:
                device.write(to_device[0])
            except BlockingIOError:
                break
            except OSError as exc:
                log.debug("device write failed: %s", exc)
            to_device.popleft()
        sel.modify(device, selectors.EVENT_READ | (selectors.EVENT_WRITE if to_device else 0), "device")

    try:
        while not stopping:
            now = time.monotonic()
            if stop_after is not None and now - started >= stop_after:
                break
            send(core.poll(now))
            deadline = core.next_deadline()
            timeout = 0.5 if deadline is None else max(0.0, min(deadline - now, 0.5))
            for key, events in sel.select(timeout):
                if key.data == "device":
                    if events & selectors.EVENT_WRITE:
                        drain_device()
                    if not events & selectors.EVENT_READ:
                        continue
                    while (packet := device.read()) is not None:
                        if not packet:
                            # peer end of the device closed: the application is gone
                            stopping.append(1)
                            break
                        send(core.from_device(packet))
                else:
                    while True:
                        try:
                            data, addr = udp.recvfrom(65536)
                        except BlockingIOError:
                            break
                        if addr != peer:
                            continue
                        flush, packet = core.from_peer(data)
                        send(flush)
                        if packet is not None:
                            to_device.append(packet)
                    if to_device:
                        drain_device()
    except (KeyboardInterrupt, _Stop):
        pass
    finally:
        sel.close()
        udp.close()
        device.close()
        log.info("vif stopped: live=%s hellos=%d dropped=%d", core.live, core.hellos_sent, core.dropped_packets)
    return core


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vif", description="Tunnel an application's IP traffic to vif-sim over UDP.")
    parser.add_argument("--peer", default=os.environ.get("VIF_PEER"), help="vif-sim address host:port (default $VIF_PEER)")
    parser.add_argument("--transport", choices=("tun", "loopback"), default="loopback")
    parser.add_argument("--buffer-limit", type=int, default=DEFAULT_BUFFER_LIMIT, help="bytes held before vif-sim is up")
    parser.add_argument("--device-fd", type=int, default=None, help="loopback device fd (default $GRIDLOOP_DEVICE_FD)")
    parser.add_argument("--tun-name", default="tun0")
    parser.add_argument("--tun-address", default=os.environ.get("GRIDLOOP_APP_IP"),
                        help="address given to the tun interface (default $GRIDLOOP_APP_IP)")
    parser.add_argument("--tunnel-fd", type=int, default=None, help="use this inherited UDP socket for the tunnel")
    parser.add_argument("--ready-fd", type=int, default=None, help="write one byte here once the device is up")
    parser.add_argument("--bind", default="127.0.0.1:0", help="local UDP address")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    if not args.peer:
        parser.error("--peer or $VIF_PEER is required")
    config = VifConfig(
        peer=parse_endpoint(args.peer),
        transport=args.transport,
        buffer_limit=args.buffer_limit,
        device_fd=args.device_fd,
        tun_name=args.tun_name,
        tun_address=args.tun_address,
        tunnel_fd=args.tunnel_fd,
        ready_fd=args.ready_fd,
        bind=parse_endpoint(args.bind),
    )
    try:
        vif_run(config)
    except OSError as exc:
        print(f"vif: cannot open {config.transport} device: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
