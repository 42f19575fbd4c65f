"""Socket transport for out-of-process simulators.

The kernel listens on TCP; an external simulator connects and then answers
requests (``init``, ``create``, ``setup_done``, ``step``, ``get_data``,
``stop``). At most one request is outstanding per connection.
"""

from __future__ import annotations

import logging
import selectors
import socket
import time
from typing import Any

from gridloop.kernel.protocol import MsgKind, ProtocolError, StreamDecoder, WireMessage, encode_message

log = logging.getLogger(__name__)

METHODS = ("init", "create", "setup_done", "step", "get_data", "stop")


class SimulatorError(Exception):
    """The simulator answered a request with an error reply."""


class SimulatorCrashed(Exception):
    """The simulator connection died or stopped answering."""


class HandshakeTimeout(SimulatorCrashed):
    pass


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must be host:port, got {text!r}")
    return host, int(port)


def listen(host: str = "127.0.0.1", port: int = 0, backlog: int = 128) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(backlog)
    return sock


def _recv_message(sock: socket.socket, decoder: StreamDecoder, backlog: list, deadline: float | None):
    while not backlog:
        if deadline is not None:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("no reply before deadline")
            sock.settimeout(remaining)
        else:
            sock.settimeout(None)
        try:
            chunk = sock.recv(1 << 16)
        except socket.timeout:
            raise TimeoutError("no reply before deadline") from None
        if not chunk:
            raise ConnectionError("connection closed by peer")
        backlog.extend(decoder.feed(chunk))
    return backlog.pop(0)


class RemoteSimulator:
    """Kernel-side proxy for a simulator reached over a socket."""

    def __init__(self, sock: socket.socket, timeout: float = 30.0, name: str = "?") -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock = sock
        self.timeout = timeout
        self.name = name
        self._decoder = StreamDecoder()
        self._backlog: list[WireMessage] = []
        self._next_id = 0
        self._pending: tuple[int, str] | None = None

    @classmethod
    def accept(cls, listener: socket.socket, timeout: float = 10.0, **kwargs) -> RemoteSimulator:
        listener.settimeout(timeout)
        try:
            conn, _ = listener.accept()
        except socket.timeout:
            raise HandshakeTimeout(f"no simulator connected within {timeout}s") from None
        finally:
            listener.settimeout(None)
        return cls(conn, **kwargs)

    @classmethod
    def connect(cls, address: tuple[str, int], timeout: float = 10.0, **kwargs) -> RemoteSimulator:
        try:
            conn = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise HandshakeTimeout(f"cannot reach simulator at {address}: {exc}") from exc
        return cls(conn, **kwargs)

    def submit(self, method: str, *args, **kwargs) -> None:
        if self._pending is not None:
            raise RuntimeError(f"request {self._pending} still outstanding")
        self._next_id += 1
        msg = WireMessage.request(self._next_id, method, args, kwargs)
        try:
            self.sock.sendall(encode_message(msg))
        except OSError as exc:
            raise SimulatorCrashed(f"{self.name}: send failed: {exc}") from exc
        self._pending = (self._next_id, method)

    def collect(self, timeout: float | None = None) -> Any:
        if self._pending is None:
            raise RuntimeError("no request outstanding")
        request_id, method = self._pending
        self._pending = None
        wait = self.timeout if timeout is None else timeout
        try:
            reply = _recv_message(self.sock, self._decoder, self._backlog, time.monotonic() + wait)
        except TimeoutError:
            kind = HandshakeTimeout if method == "init" else SimulatorCrashed
            raise kind(f"{self.name}: no reply to {method!r} within {wait}s") from None
        except (ConnectionError, OSError, ProtocolError) as exc:
            raise SimulatorCrashed(f"{self.name}: {method!r} failed: {exc}") from exc
        if reply.request_id != request_id:
            raise SimulatorCrashed(f"{self.name}: reply id {reply.request_id} != request id {request_id}")
        if reply.kind is MsgKind.ERROR:
            raise SimulatorError(f"{self.name}.{method}: {reply.payload}")
        if reply.kind is not MsgKind.SUCCESS:
            raise SimulatorCrashed(f"{self.name}: unexpected {reply.kind.name} frame")
        return reply.payload

    def call(self, method: str, *args, timeout: float | None = None, **kwargs) -> Any:
        self.submit(method, *args, **kwargs)
        return self.collect(timeout)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class RequestServer:
    """Simulator-side endpoint: reads requests from the kernel connection.

    ``poll`` is non-blocking so it can be embedded into a larger selector
    loop (vif-sim does this); ``serve`` is the plain blocking loop.
    """

    def __init__(self, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock = sock
        self._decoder = StreamDecoder()
        self.closed = False

    @classmethod
    def connect(cls, address: tuple[str, int], timeout: float = 10.0) -> RequestServer:
        deadline = time.monotonic() + timeout
        while True:
            try:
                sock = socket.create_connection(address, timeout=max(deadline - time.monotonic(), 0.1))
                sock.settimeout(None)
                return cls(sock)
            except OSError:
                if time.monotonic() >= deadline:
                    raise
                time.sleep(0.05)

    def read_requests(self) -> list[WireMessage]:
        try:
            chunk = self.sock.recv(1 << 16)
        except BlockingIOError:
            return []
        except OSError:
            chunk = b""
        if not chunk:
            self.closed = True
            return []
        return self._decoder.feed(chunk)

    def reply(self, request_id: int, result: Any) -> None:
        try:
            frame = encode_message(WireMessage.success(request_id, result))
        except ProtocolError as exc:
            frame = encode_message(WireMessage.error(request_id, str(exc)))
        self.sock.sendall(frame)

    def fail(self, request_id: int, message: str) -> None:
        self.sock.sendall(encode_message(WireMessage.error(request_id, message)))


def dispatch(sim, msg: WireMessage) -> Any:
    method, args, kwargs = msg.payload
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    return getattr(sim, method)(*args, **kwargs)


def serve(sim, address: tuple[str, int], timeout: float = 10.0) -> None:
    """Connect to a kernel and answer its requests until ``stop`` or EOF."""
    server = RequestServer.connect(address, timeout)
    sel = selectors.DefaultSelector()
    sel.register(server.sock, selectors.EVENT_READ)
    try:
        while not server.closed:
            sel.select()
            for msg in server.read_requests():
                if msg.kind is not MsgKind.REQUEST:
                    continue
                try:
                    result = dispatch(sim, msg)
                except Exception as exc:  # reported to the kernel, which aborts the run
                    log.exception("request %s failed", msg.payload[0])
                    server.fail(msg.request_id, f"{type(exc).__name__}: {exc}")
                    continue
                server.reply(msg.request_id, result)
                if msg.payload[0] == "stop":
                    return
    finally:
        sel.close()
        server.sock.close()
