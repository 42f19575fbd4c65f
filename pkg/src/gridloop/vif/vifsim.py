"""vif-sim: the kernel-side half of the packet bridge.

vif-sim registers with the kernel as one simulator exposing ``vif``
entities (``tx`` output, ``rx`` input, both lists of Base64 packets). On
the tunnel side it learns each container's return address from hellos or
data, reassembles the byte stream into IP packets, and hands every packet
completed since the previous poll to the kernel.

Two modes:

* ``per-container`` (default): one process per container; any datagram
  source is that container.
* ``mux``: one process for many containers; sources are told apart by
  address and bound to an entity by the source IP of their first packet.

Clocked containers (see ``gridloop.vif.clock``) are stepped in lockstep:
``get_data`` is answered only once every ticked container has tocked.
"""

from __future__ import annotations

import argparse
import logging
import selectors
import socket
import sys
import time
from collections import Counter
from dataclasses import dataclass, field

from gridloop.kernel.protocol import MsgKind
from gridloop.kernel.remote import RequestServer, parse_endpoint
from gridloop.vif.clock import NO_WAKE, READY, parse_tock, tick_packet
from gridloop.vif.codec import decode_packets_b64, encode_packets_b64
from gridloop.vif.framing import FrameBuffer
from gridloop.vif.transport import MAX_DATAGRAM, open_tunnel_socket

log = logging.getLogger("gridloop.vifsim")

META = {
    "models": {
        "vif": {"public": True, "params": ["ip", "clocked"], "inputs": ["rx"], "outputs": ["tx"]},
    }
}
MODES = ("per-container", "mux")
MAX_HELD = 4 * 1024 * 1024

Address = tuple[str, int]


@dataclass
class Container:
    eid: str
    ip: str | None
    clocked: bool
    addr: Address | None = None
    ready: bool = False
    next_wake: int = NO_WAKE
    pending_tick: int | None = None
    tx: list[bytes] = field(default_factory=list)
    backlog: list[bytes] = field(default_factory=list)


class VifSimCore:
    """Tunnel bookkeeping without sockets: datagrams in, datagrams out."""

    def __init__(self, mode: str = "per-container") -> None:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.containers: dict[str, Container] = {}
        self.streams: dict[Address, FrameBuffer] = {}
        self.bindings: dict[Address, str] = {}
        self.announced: list[Address] = []
        self.held: dict[Address, list[bytes]] = {}
        self.held_bytes = 0
        self.pending_out: list[tuple[bytes, Address]] = []
        self.counters = Counter()

    # -- entities --

    def create(self, num: int, model: str, ip: str | None = None, clocked: bool = False) -> list[dict]:
        if model != "vif":
            raise ValueError(f"unknown model {model!r}")
        if self.mode == "per-container" and (num != 1 or self.containers):
            raise ValueError("per-container vif-sim serves exactly one entity")
        if self.mode == "mux" and not ip:
            raise ValueError("mux mode needs the container ip to attribute traffic")
        created = []
        for _ in range(num):
            eid = f"vif-{len(self.containers)}"
            self.containers[eid] = Container(eid, ip, bool(clocked))
            created.append({"eid": eid, "type": model})
        if self.mode == "per-container" and self.announced:
            self._bind(self.announced[-1], created[0]["eid"])
        self.pending_out.extend(self._release_held())
        return created

    def _bind(self, addr: Address, eid: str) -> None:
        self.bindings[addr] = eid
        self.containers[eid].addr = addr

    def _by_ip(self, ip: str) -> str | None:
        for eid, c in self.containers.items():
            if c.ip == ip:
                return eid
        return None

    # -- tunnel side --

    def handle_datagram(self, addr: Address, data: bytes) -> list[tuple[bytes, Address]]:
        out = []
        if addr not in self.announced:
            self.announced.append(addr)
        if self.mode == "per-container" and addr not in self.bindings and self.containers:
            self._bind(addr, next(iter(self.containers)))
        if not data:
            self.counters["hellos"] += 1
            out.append((b"", addr))
            out.extend(self._flush_backlog(addr))
            return out
        stream = self.streams.setdefault(addr, FrameBuffer())
        before = stream.desyncs
        packets = stream.feed(data)
        self.counters["desyncs"] += stream.desyncs - before
        for packet in packets:
            out.extend(self._accept(addr, packet))
        return out

    def _accept(self, addr: Address, packet: bytes) -> list[tuple[bytes, Address]]:
        out = []
        eid = self.bindings.get(addr)
        tock = parse_tock(packet)
        if eid is None and self.mode == "mux":
            src = tock[0] if tock else _src_ip(packet)
            eid = self._by_ip(src) if src else None
            if eid is not None:
                self._bind(addr, eid)
                out.extend(self._flush_backlog(addr))
        if eid is None:
            # No entity yet (the kernel may still be creating it): hold the
            # packet and attribute it once the entity exists.
            self.counters["unattributed"] += 1
            self._hold(addr, packet)
            return out
        container = self.containers[eid]
        if tock is not None:
            self._on_tock(container, tock[1], tock[2])
        else:
            container.tx.append(packet)
            self.counters["packets_in"] += 1
        return out

    def _hold(self, addr: Address, packet: bytes) -> None:
        self.held.setdefault(addr, []).append(packet)
        self.held_bytes += len(packet)
        while self.held_bytes > MAX_HELD:
            oldest = next(a for a, ps in self.held.items() if ps)
            self.held_bytes -= len(self.held[oldest].pop(0))
            self.counters["held_dropped"] += 1

    def _release_held(self) -> list[tuple[bytes, Address]]:
        held, self.held, self.held_bytes = self.held, {}, 0
        out = []
        for addr, packets in held.items():
            for packet in packets:
                self.counters["unattributed"] -= 1
                out.extend(self._accept(addr, packet))
        return out

    def _on_tock(self, container: Container, t: int, next_wake: int) -> None:
        if t == READY:
            container.ready = True
            container.next_wake = next_wake
        elif container.pending_tick == t:
            container.pending_tick = None
            container.next_wake = next_wake
        else:
            self.counters["stale_tocks"] += 1

    def _flush_backlog(self, addr: Address) -> list[tuple[bytes, Address]]:
        eid = self.bindings.get(addr)
        if eid is None:
            return []
        c = self.containers[eid]
        out = [(chunk, addr) for p in c.backlog for chunk in _chunks(p)]
        c.backlog.clear()
        return out

    # -- kernel side --

    def all_ready(self) -> bool:
        return all(c.ready and c.addr is not None for c in self.containers.values() if c.clocked)

    def settled(self) -> bool:
        return all(c.pending_tick is None for c in self.containers.values())

    def step(self, t: int, inputs: dict) -> list[tuple[bytes, Address]]:
        out = []
        for eid, c in self.containers.items():
            packets = []
            for value in inputs.get(eid, {}).get("rx", {}).values():
                if value:
                    packets.extend(decode_packets_b64(value))
            self.counters["packets_out"] += len(packets)
            if c.addr is None:
                c.backlog.extend(packets)
                continue
            for p in packets:
                out.extend((chunk, c.addr) for chunk in _chunks(p))
            if c.clocked and c.ready:
                due = c.next_wake != NO_WAKE and t >= c.next_wake
                if packets or due:
                    out.append((tick_packet(c.ip, t), c.addr))
                    c.pending_tick = t
        return out

    def collect(self, outputs: dict) -> dict:
        data = {}
        for eid, attrs in outputs.items():
            c = self.containers[eid]
            data[eid] = {"tx": encode_packets_b64(c.tx)} if "tx" in attrs else {}
            c.tx = []
        return data


def _chunks(packet: bytes) -> list[bytes]:
    return [packet[i:i + MAX_DATAGRAM] for i in range(0, len(packet), MAX_DATAGRAM)]


def _src_ip(packet: bytes) -> str | None:
    from gridloop import ip as iplib

    try:
        return iplib.parse_header(packet).src
    except iplib.MalformedPacket:
        return None


class VifSimServer:
    """Single-threaded selector loop joining the kernel link and the UDP tunnel."""

    def __init__(self, kernel: Address, listen: Address | None, mode: str = "per-container",
                 tock_timeout: float = 10.0, ready_timeout: float = 60.0, udp: socket.socket | None = None) -> None:
        self.core = VifSimCore(mode)
        if udp is None:
            udp = open_tunnel_socket(listen)
        udp.setblocking(False)
        self.udp = udp
        self.kernel_address = kernel
        self.tock_timeout = tock_timeout
        self.ready_timeout = ready_timeout
        self.sid = None
        self.requests = Counter()
        self._deferred = None

    @property
    def listen_address(self) -> Address:
        return self.udp.getsockname()

    def _send(self, datagrams) -> None:
        for data, addr in datagrams:
            try:
                self.udp.sendto(data, addr)
            except OSError as exc:
                log.debug("send to %s failed: %s", addr, exc)

    def _pump_udp(self) -> None:
        while True:
            try:
                data, addr = self.udp.recvfrom(65536)
            except BlockingIOError:
                return
            self._send(self.core.handle_datagram(addr, data))

    def _handle(self, server: RequestServer, msg) -> bool:
        method, args, kwargs = msg.payload
        self.requests[method] += 1
        core = self.core
        if method == "init":
            self.sid = args[0] if args else kwargs.get("sid")
            server.reply(msg.request_id, META)
        elif method == "create":
            server.reply(msg.request_id, core.create(*args, **kwargs))
            self._send(core.pending_out)
            core.pending_out = []
            self._pump_udp()
        elif method == "setup_done":
            self._deferred = (msg.request_id, core.all_ready, lambda: None,
                              time.monotonic() + self.ready_timeout, "containers never became ready")
        elif method == "step":
            self._send(core.step(*args, **kwargs))
            server.reply(msg.request_id, None)
        elif method == "get_data":
            outputs = args[0] if args else kwargs["outputs"]
            self._deferred = (msg.request_id, core.settled, lambda: core.collect(outputs),
                              time.monotonic() + self.tock_timeout, "clocked container did not answer its tick")
        elif method == "stop":
            server.reply(msg.request_id, None)
            return False
        else:
            server.fail(msg.request_id, f"unknown method {method!r}")
        return True

    def run(self) -> None:
        server = RequestServer.connect(self.kernel_address)
        sel = selectors.DefaultSelector()
        sel.register(server.sock, selectors.EVENT_READ, "kernel")
        sel.register(self.udp, selectors.EVENT_READ, "udp")
        running = True
        try:
            while running and not server.closed:
                timeout = None if self._deferred is None else 0.05
                for key, _ in sel.select(timeout):
                    if key.data == "udp":
                        self._pump_udp()
                    else:
                        for msg in server.read_requests():
                            if msg.kind is not MsgKind.REQUEST:
                                continue
                            try:
                                running = self._handle(server, msg) and running
                            except Exception as exc:  # reported to the kernel, which aborts the run
                                log.exception("request %s failed", msg.payload[0])
                                server.fail(msg.request_id, f"{type(exc).__name__}: {exc}")
                if self._deferred is not None:
                    self._pump_udp()
                    request_id, done, result, deadline, why = self._deferred
                    if done():
                        self._deferred = None
                        server.reply(request_id, result())
                    elif time.monotonic() > deadline:
                        self._deferred = None
                        server.fail(request_id, why)
        finally:
            sel.close()
            self.udp.close()
            server.sock.close()
            log.info("vif-sim stopped: %s", dict(self.core.counters))


def vifsim_run(kernel: Address, listen: Address | None, mode: str = "per-container", **kwargs) -> VifSimCore:
    server = VifSimServer(kernel, listen, mode, **kwargs)
    server.run()
    return server.core


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vif-sim", description="Kernel-side adapter for vif tunnels.")
    parser.add_argument("--kernel", required=True, help="kernel listener host:port")
    where = parser.add_mutually_exclusive_group(required=True)
    where.add_argument("--listen", help="UDP tunnel address host:port")
    where.add_argument("--listen-fd", type=int, help="already bound UDP socket inherited from the runner")
    parser.add_argument("--mode", choices=MODES, default="per-container")
    parser.add_argument("--tock-timeout", type=float, default=10.0)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    udp = None
    if args.listen_fd is not None:
        udp = socket.socket(fileno=args.listen_fd)
    listen = parse_endpoint(args.listen) if args.listen else None
    try:
        vifsim_run(parse_endpoint(args.kernel), listen, args.mode, tock_timeout=args.tock_timeout, udp=udp)
    except OSError as exc:
        print(f"vif-sim: kernel handshake failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
