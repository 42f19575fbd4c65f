"""Minimal event loop shared by the test apps.

The app owns one end of the loopback device (raw IP packets) and a
line-delimited JSON control channel on stdin/stdout:

* harness -> app: ``{"t": 12, "readings": {"v_pu": 1.02}}``
* app -> harness: exactly one ``{"t": 12, "setpoints": {...}}`` per readings line
* app -> harness, unsolicited: ``{"event": "...", ...}``

On a real tun device (``$GRIDLOOP_TUN`` names the interface, inside the
app's own network namespace) raw packets go through an AF_PACKET socket
instead; the host stack is kept quiet by claiming the UDP ports the app
uses and by leaving ICMP echo to the app.

In clocked mode time comes from tick packets (see ``gridloop.vif.clock``);
packets delivered in a step are handled when that step's tick arrives. In
free-run mode time is wall-clock milliseconds since start.
"""

from __future__ import annotations

import heapq
import json
import os
import selectors
import signal
import socket
import sys
import time

from gridloop.vif.clock import CLOCK_PORT, NO_WAKE, READY, parse_tick, tock_packet
from gridloop.vif.device import DEVICE_FD_ENV

TUN_ENV = "GRIDLOOP_TUN"
ETH_P_ALL = 0x0003
ETH_P_IP = 0x0800
ETH_P_IPV6 = 0x86DD
PACKET_OUTGOING = 4
SOL_PACKET = 263
PACKET_IGNORE_OUTGOING = 23


class TunPacketDevice:
    """Raw IP packets on a tun interface, seen from the application side."""

    def __init__(self, ifname: str) -> None:
        self.ifname = ifname
        self.sock = socket.socket(socket.AF_PACKET, socket.SOCK_DGRAM, socket.htons(ETH_P_ALL))
        try:
            self.sock.setsockopt(SOL_PACKET, PACKET_IGNORE_OUTGOING, 1)
        except OSError:
            pass  # older kernels: outgoing copies are filtered in recv
        self.sock.bind((ifname, ETH_P_ALL))
        self.sock.setblocking(False)
        self._claimed: dict[int, socket.socket] = {}
        # the app answers pings itself
        _sysctl("/proc/sys/net/ipv4/icmp_echo_ignore_all", "1")

    def fileno(self) -> int:
        return self.sock.fileno()

    def send(self, packet: bytes) -> None:
        proto = ETH_P_IPV6 if packet and packet[0] >> 4 == 6 else ETH_P_IP
        self.sock.sendto(packet, (self.ifname, proto))

    def recv(self, size: int) -> bytes | None:
        """Next inbound packet, None when only outgoing copies were queued."""
        while True:
            try:
                data, addr = self.sock.recvfrom(size)
            except BlockingIOError:
                return None
            if addr[2] != PACKET_OUTGOING:
                return data

    def claim_udp(self, port: int) -> None:
        """Bind (and never read) a kernel socket so the host does not reject the port."""
        if port in self._claimed:
            return
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4096)
        s.bind(("0.0.0.0", port))
        self._claimed[port] = s

    def close(self) -> None:
        for s in self._claimed.values():
            s.close()
        self.sock.close()


def _sysctl(path: str, value: str) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(value)
    except OSError:
        pass


def default_device():
    if DEVICE_FD_ENV in os.environ:
        return socket.socket(fileno=int(os.environ[DEVICE_FD_ENV]))
    if TUN_ENV in os.environ:
        return TunPacketDevice(os.environ[TUN_ENV])
    raise RuntimeError(f"no device: set ${DEVICE_FD_ENV} or ${TUN_ENV}")


class App:
    """Override what you need. ``rt`` is the running Runtime."""

    def start(self, rt: Runtime) -> None:
        pass

    def on_packet(self, rt: Runtime, packet: bytes) -> None:
        pass

    def on_readings(self, rt: Runtime, t: int, readings: dict) -> dict:
        return {}


def _exit_quietly(*_):
    raise SystemExit(0)


class Runtime:
    def __init__(self, ip: str, clocked: bool = True, device: socket.socket | None = None,
                 stdin=None, stdout=None) -> None:
        self.ip = ip
        self.clocked = clocked
        if device is None:
            device = default_device()
        self.device = device
        self.stdin = stdin if stdin is not None else sys.stdin
        self.stdout = stdout if stdout is not None else sys.stdout
        self.now = 0
        self._t0 = time.monotonic()
        self._timers: list = []
        self._seq = 0
        self._inbox: list[bytes] = []
        self._pending = b""
        self.running = True

    # -- services for apps --

    def send(self, packet: bytes) -> None:
        self.device.send(packet)

    def claim_udp(self, port: int) -> None:
        """Declare a UDP port the app receives on (matters only on a real tun)."""
        claim = getattr(self.device, "claim_udp", None)
        if claim is not None:
            claim(port)

    def call_at(self, t: int, fn) -> None:
        heapq.heappush(self._timers, (t, self._seq, fn))
        self._seq += 1

    def emit(self, event: str, **fields) -> None:
        self.stdout.write(json.dumps({"event": event, **fields}, sort_keys=True) + "\n")
        self.stdout.flush()

    def stop(self) -> None:
        self.running = False

    # -- loop --

    def _next_wake(self) -> int:
        return self._timers[0][0] if self._timers else NO_WAKE

    def _run_timers(self) -> None:
        while self._timers and self._timers[0][0] <= self.now:
            _, _, fn = heapq.heappop(self._timers)
            fn()

    def _wall_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def _control(self, app: App) -> bool:
        chunk = os.read(self.stdin.fileno(), 65536)
        if not chunk:
            return False
        self._pending += chunk
        *lines, self._pending = self._pending.split(b"\n")
        for line in lines:
            if not line.strip():
                continue
            msg = json.loads(line)
            setpoints = app.on_readings(self, msg.get("t", self.now), msg.get("readings", {})) or {}
            self.stdout.write(json.dumps({"t": msg.get("t"), "setpoints": setpoints}, sort_keys=True) + "\n")
            self.stdout.flush()
        return True

    def run(self, app: App) -> None:
        signal.signal(signal.SIGTERM, _exit_quietly)
        sel = selectors.DefaultSelector()
        sel.register(self.device, selectors.EVENT_READ, "device")
        try:
            sel.register(self.stdin, selectors.EVENT_READ, "control")
        except (ValueError, OSError):
            pass
        app.start(self)
        if self.clocked:
            self.claim_udp(CLOCK_PORT)
            self.send(tock_packet(self.ip, READY, self._next_wake()))
        else:
            self.now = self._wall_ms()
            self._run_timers()
        while self.running:
            timeout = None
            if not self.clocked and self._timers:
                timeout = max(0.0, (self._timers[0][0] - self._wall_ms()) / 1000)
            for key, _ in sel.select(timeout):
                if key.data == "control":
                    if not self._control(app):
                        sel.unregister(self.stdin)
                    continue
                packet = self.device.recv(65536)
                if packet is None:
                    continue
                if not packet:
                    self.running = False
                    break
                if not self.clocked:
                    self.now = self._wall_ms()
                    app.on_packet(self, packet)
                    continue
                t = parse_tick(packet)
                if t is None:
                    self._inbox.append(packet)
                    continue
                self.now = t
                inbox, self._inbox = self._inbox, []
                for p in inbox:
                    app.on_packet(self, p)
                self._run_timers()
                self.send(tock_packet(self.ip, t, self._next_wake()))
            if not self.clocked:
                self.now = self._wall_ms()
                self._run_timers()
        sel.close()
