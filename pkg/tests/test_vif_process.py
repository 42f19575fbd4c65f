import socket
import subprocess
import sys
import time

import pytest

from gridloop import ip as iplib
from gridloop.vif.device import device_pair
from gridloop.vif.framing import FrameBuffer
from gridloop.vif.transport import assert_datagram_only

pytestmark = [pytest.mark.integration, pytest.mark.usefixtures("no_leaked_children")]


class FakeVifSim:
    def __init__(self):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.settimeout(5)
        self.peer = "127.0.0.1:%d" % self.sock.getsockname()[1]

    def recv(self, timeout=5):
        self.sock.settimeout(timeout)
        return self.sock.recvfrom(65536)


@pytest.fixture
def vif():
    sim = FakeVifSim()
    vif_end, app_end = device_pair()
    proc = subprocess.Popen([sys.executable, "-m", "gridloop.vif.vif", "--peer", sim.peer,
                             "--device-fd", str(vif_end.fileno())], pass_fds=(vif_end.fileno(),))
    vif_end.close()
    app_end.settimeout(5)
    yield sim, app_end, proc
    app_end.close()
    try:
        proc.wait(5)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()
    sim.sock.close()


def packets(n, size=200):
    return [iplib.ipv4_packet("10.64.0.2", "10.64.1.2", 17, bytes([i % 256]) * size) for i in range(n)]


def test_hello_retry_after_unanswered_burst(vif):
    sim, _, proc = vif
    t0 = time.monotonic()
    arrivals = []
    while len(arrivals) < 6:
        data, addr = sim.recv()
        assert data == b""
        arrivals.append(time.monotonic() - t0)
    # burst of five 100 ms apart, then a fresh burst about 1 s after the last one
    assert arrivals[4] - arrivals[0] == pytest.approx(0.4, abs=0.15)
    assert arrivals[5] - arrivals[4] == pytest.approx(1.0, abs=0.3)
    assert_datagram_only([proc.pid])


def test_buffered_packets_survive_lost_hellos(vif):
    sim, app, _ = vif
    sent = packets(300)
    for p in sent:
        app.send(p)
    # ignore the whole first burst, as if every hello was lost
    for _ in range(5):
        sim.recv()
    data, addr = sim.recv(3)
    assert data == b""
    sim.sock.sendto(b"", addr)
    fb = FrameBuffer()
    got = []
    while len(got) < len(sent):
        data, _ = sim.recv()
        got.extend(fb.feed(data))
    assert got == sent and fb.desyncs == 0
    # and the way back
    reply = iplib.icmp_echo("10.64.1.2", "10.64.0.2", 1, 1, b"pong")
    sim.sock.sendto(reply, addr)
    assert app.recv(65536) == reply


def test_exits_when_app_closes_device(vif):
    sim, app, proc = vif
    sim.recv()
    app.close()
    assert proc.wait(5) == 0


def test_inherited_stream_tunnel_is_refused():
    from gridloop.vif.transport import TransportViolation
    from gridloop.vif.vif import VifConfig, vif_run

    vif_end, app_end = device_pair()
    stream = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        config = VifConfig(peer=("127.0.0.1", 9), device_fd=vif_end.detach(), tunnel_fd=stream.detach())
        with pytest.raises(TransportViolation):
            vif_run(config, stop_after=0.1)
    finally:
        app_end.close()
