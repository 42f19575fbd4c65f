"""The bundled test applications."""

from __future__ import annotations

import ipaddress
import struct

from gridloop import ip as iplib
from gridloop.apps.testapps.runtime import App

BULK_PORT = 5201
_DATA = struct.Struct("!II")  # transfer id, segment index
_ACK = struct.Struct("!II")  # transfer id, next expected segment


def ident_for(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip)) & 0xFFFF


def droop_setpoint(v_pu: float, gain_kw: float = 100.0, v_ref: float = 1.0) -> float:
    """Proportional droop on the bus's net load: ``p_kw = gain_kw * (v_pu - v_ref)``.

    The result is a load change in kW: shed load (negative) below the
    reference voltage, absorb more above it.
    """
    return gain_kw * (v_pu - v_ref)


class EchoResponder(App):
    """Answers ICMP echo requests addressed to it."""

    def __init__(self) -> None:
        self.answered = 0

    def on_packet(self, rt, packet):
        echo = iplib.parse_icmp_echo(packet)
        if echo is None or echo.reply or echo.dst != rt.ip:
            return
        rt.send(iplib.icmp_echo(rt.ip, echo.src, echo.ident, echo.seq, echo.data, reply=True))
        self.answered += 1


class Pinger(App):
    """Sends ``count`` echo requests, one every ``interval`` ms from ``start``.

    With ``wait_reply`` a request also waits for the previous one to be
    answered (or to time out), so at most one echo is in flight at a time.
    """

    def __init__(self, target: str, count: int = 1, interval: int = 100, start: int = 0, size: int = 56,
                 wait_reply: bool = False, timeout: int = 5000) -> None:
        self.target = target
        self.count = count
        self.interval = interval
        self.start_at = start
        self.size = size
        self.wait_reply = wait_reply
        self.timeout = timeout
        self.sent: dict[int, int] = {}

    def start(self, rt):
        self.ident = ident_for(rt.ip)
        if self.wait_reply:
            rt.call_at(self.start_at, lambda: self._ping(rt, 0))
            return
        for seq in range(self.count):
            rt.call_at(self.start_at + seq * self.interval, lambda seq=seq: self._ping(rt, seq))

    def _ping(self, rt, seq):
        data = bytes((seq + i) & 0xFF for i in range(self.size))
        self.sent[seq] = rt.now
        rt.send(iplib.icmp_echo(rt.ip, self.target, self.ident, seq, data))
        rt.emit("echo_request", seq=seq, t=rt.now)
        if self.wait_reply:
            rt.call_at(rt.now + self.timeout, lambda: self._expire(rt, seq))

    def _next(self, rt, seq):
        nxt = seq + 1
        if nxt < self.count:
            rt.call_at(max(rt.now, self.start_at + nxt * self.interval), lambda: self._ping(rt, nxt))

    def _expire(self, rt, seq):
        if self.sent.pop(seq, None) is not None:
            self._next(rt, seq)

    def on_packet(self, rt, packet):
        echo = iplib.parse_icmp_echo(packet)
        if echo is None or not echo.reply or echo.ident != self.ident or echo.seq not in self.sent:
            return
        expected = bytes((echo.seq + i) & 0xFF for i in range(self.size))
        rt.emit("echo_reply", seq=echo.seq, t=rt.now, rtt_ms=rt.now - self.sent.pop(echo.seq),
                intact=echo.data == expected)
        if self.wait_reply:
            self._next(rt, echo.seq)


class BulkReceiver(App):
    """Sink for BulkSender: in-order segments only, cumulative acks."""

    def __init__(self) -> None:
        self.expected: dict[tuple[str, int], int] = {}
        self.bytes = 0

    def start(self, rt):
        rt.claim_udp(BULK_PORT)

    def on_packet(self, rt, packet):
        dgram = iplib.parse_udp(packet)
        if dgram is None or dgram.dport != BULK_PORT or len(dgram.payload) < _DATA.size:
            return
        tid, idx = _DATA.unpack_from(dgram.payload)
        key = (dgram.src, tid)
        nxt = self.expected.get(key, 0)
        if idx == nxt:
            nxt += 1
            self.expected[key] = nxt
            self.bytes += len(dgram.payload) - _DATA.size
        rt.send(iplib.udp_packet(rt.ip, dgram.src, BULK_PORT, dgram.sport, _ACK.pack(tid, nxt)))


class BulkSender(App):
    """Go-back-N bulk transfer of ``nbytes`` per run, ``repeats`` runs.

    A run starts at ``start + k * interval`` or right after the previous one
    ends, whichever is later. Throughput is reported in bytes per simulated
    ms, which equals kB/s.
    """

    def __init__(self, target: str, nbytes: int, repeats: int = 1, interval: int = 0, start: int = 0,
                 window: int = 32, segment: int = 1400, rto: int = 200, stall: int = 2000) -> None:
        self.target = target
        self.nbytes = nbytes
        self.repeats = repeats
        self.interval = interval
        self.start_at = start
        self.window = window
        self.segment = segment
        self.rto = rto
        self.stall = stall
        self.nseg = max(1, -(-nbytes // segment))
        self.run_id = -1
        self.active = False

    def start(self, rt):
        self.sport = 40000 + ident_for(rt.ip) % 20000
        rt.claim_udp(self.sport)
        rt.call_at(self.start_at, lambda: self._begin(rt, 0))

    def _payload(self, idx: int) -> bytes:
        size = min(self.segment, self.nbytes - idx * self.segment) if self.nbytes else 0
        return _DATA.pack(self.run_id, idx) + bytes((idx + i) & 0xFF for i in range(size))

    def _begin(self, rt, k):
        self.run_id = k
        self.active = True
        self.base = 0
        self.next = 0
        self.t_start = rt.now
        self.progress_at = rt.now
        self.retransmits = 0
        self._fill(rt)
        self._arm(rt)

    def _fill(self, rt):
        while self.next < min(self.base + self.window, self.nseg):
            rt.send(iplib.udp_packet(rt.ip, self.target, self.sport, BULK_PORT, self._payload(self.next)))
            self.next += 1

    def _arm(self, rt):
        run, base = self.run_id, self.base
        rt.call_at(rt.now + self.rto, lambda: self._timeout(rt, run, base))

    def _timeout(self, rt, run, base):
        if not self.active or run != self.run_id or base != self.base:
            return
        if rt.now - self.progress_at >= self.stall:
            rt.emit("transfer_failed", run=run, t=rt.now, acked=self.base * self.segment)
            self._finish(rt)
            return
        self.retransmits += 1
        self.next = self.base
        self._fill(rt)
        self._arm(rt)

    def _finish(self, rt):
        self.active = False
        k = self.run_id + 1
        if k < self.repeats:
            rt.call_at(max(rt.now, self.start_at + k * self.interval), lambda: self._begin(rt, k))

    def on_packet(self, rt, packet):
        dgram = iplib.parse_udp(packet)
        if dgram is None or dgram.dport != self.sport or len(dgram.payload) != _ACK.size:
            return
        tid, acked = _ACK.unpack(dgram.payload)
        if not self.active or tid != self.run_id or acked <= self.base:
            return
        self.base = acked
        self.progress_at = rt.now
        if self.base >= self.nseg:
            elapsed = rt.now - self.t_start
            rt.emit("transfer_done", run=self.run_id, t=rt.now, bytes=self.nbytes, elapsed_ms=elapsed,
                    kBps=self.nbytes / elapsed if elapsed else None, retransmits=self.retransmits)
            self._finish(rt)
            return
        self._fill(rt)
        self._arm(rt)


class DroopController(App):
    """Substation-style controller: turns voltage readings into power setpoints."""

    def __init__(self, gain_kw: float = 100.0, v_ref: float = 1.0) -> None:
        self.gain_kw = gain_kw
        self.v_ref = v_ref

    def on_readings(self, rt, t, readings):
        if "v_pu" not in readings:
            return {}
        return {"p_kw": droop_setpoint(readings["v_pu"], self.gain_kw, self.v_ref)}


class Composite(App):
    """Several apps sharing one address, like services in one container."""

    def __init__(self, *apps: App) -> None:
        self.apps = apps

    def start(self, rt):
        for app in self.apps:
            app.start(rt)

    def on_packet(self, rt, packet):
        for app in self.apps:
            app.on_packet(rt, packet)

    def on_readings(self, rt, t, readings):
        out = {}
        for app in self.apps:
            out.update(app.on_readings(rt, t, readings) or {})
        return out

