"""Linux tun device for the real transport.

The interface is set up with plain ioctls (no ``ip`` binary needed): the
container address gets a /10 prefix, so the whole modeled network and the
clock address are on-link through the tunnel. IPv6 is switched off on the
interface to keep the kernel from sending neighbour discovery traffic into
the model. The interface also becomes the default route (no gateway), so
every destination is captured. The tunnel socket to vif-sim is expected to
live in another network namespace, which is why no host route excluding
vif-sim is needed. Needs CAP_NET_ADMIN, normally inside a fresh network
namespace (see ``gridloop.apps.harness.NamespaceLauncher``).
"""

from __future__ import annotations

import ctypes
import fcntl
import ipaddress
import os
import socket
import struct

TUNSETIFF = 0x400454CA
IFF_TUN = 0x0001
IFF_NO_PI = 0x1000
IFF_UP = 0x1
IFF_RUNNING = 0x40
SIOCGIFFLAGS = 0x8913
SIOCSIFFLAGS = 0x8914
SIOCSIFADDR = 0x8916
SIOCSIFNETMASK = 0x891C
SIOCSIFMTU = 0x8922
SIOCADDRT = 0x890B
RTF_UP = 0x1
IFREQ_SIZE = 40
MODEL_PREFIX = 10


def _ifreq(name: str, payload: bytes = b"") -> bytes:
    return struct.pack("16s", name.encode()) + payload.ljust(IFREQ_SIZE - 16, b"\0")


def _sockaddr_in(addr: str) -> bytes:
    return struct.pack("H2s4s", socket.AF_INET, b"\0\0", ipaddress.IPv4Address(addr).packed)


def _sysctl(path: str, value: str) -> bool:
    try:
        with open(path, "w") as fh:
            fh.write(value)
        return True
    except OSError:
        return False


class _Sockaddr(ctypes.Structure):
    _fields_ = [("family", ctypes.c_ushort), ("data", ctypes.c_char * 14)]


class _Rtentry(ctypes.Structure):
    _fields_ = [
        ("pad1", ctypes.c_ulong), ("dst", _Sockaddr), ("gateway", _Sockaddr), ("genmask", _Sockaddr),
        ("flags", ctypes.c_ushort), ("pad2", ctypes.c_short), ("pad3", ctypes.c_ulong), ("pad4", ctypes.c_void_p),
        ("metric", ctypes.c_short), ("dev", ctypes.c_char_p), ("mtu", ctypes.c_ulong), ("window", ctypes.c_ulong),
        ("irtt", ctypes.c_ushort),
    ]


def add_default_route(sock: socket.socket, name: str) -> None:
    dev = ctypes.create_string_buffer(name.encode())
    rt = _Rtentry(flags=RTF_UP, dev=ctypes.cast(dev, ctypes.c_char_p))
    rt.dst.family = rt.genmask.family = socket.AF_INET
    try:
        fcntl.ioctl(sock, SIOCADDRT, rt)
    except FileExistsError:
        pass


def configure_interface(name: str, address: str | None, prefix: int = MODEL_PREFIX, mtu: int = 1500,
                        default_route: bool = True) -> None:
    _sysctl(f"/proc/sys/net/ipv6/conf/{name}/disable_ipv6", "1")
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        fcntl.ioctl(s, SIOCSIFMTU, _ifreq(name, struct.pack("i", mtu)))
        if address:
            mask = str(ipaddress.IPv4Network(f"0.0.0.0/{prefix}").netmask)
            fcntl.ioctl(s, SIOCSIFADDR, _ifreq(name, _sockaddr_in(address)))
            fcntl.ioctl(s, SIOCSIFNETMASK, _ifreq(name, _sockaddr_in(mask)))
        flags = struct.unpack_from("H", fcntl.ioctl(s, SIOCGIFFLAGS, _ifreq(name)), 16)[0]
        fcntl.ioctl(s, SIOCSIFFLAGS, _ifreq(name, struct.pack("H", flags | IFF_UP | IFF_RUNNING)))
        if default_route:
            add_default_route(s, name)


class TunDevice:
    def __init__(self, fd: int, name: str) -> None:
        self.fd = fd
        self.name = name

    @classmethod
    def create(cls, name: str = "tun0", address: str | None = None, prefix: int = MODEL_PREFIX,
               mtu: int = 1500) -> TunDevice:
        fd = os.open("/dev/net/tun", os.O_RDWR)
        try:
            ifr = fcntl.ioctl(fd, TUNSETIFF, struct.pack("16sH", name.encode(), IFF_TUN | IFF_NO_PI))
            name = ifr[:16].rstrip(b"\0").decode()
            configure_interface(name, address, prefix, mtu)
        except Exception:
            os.close(fd)
            raise
        os.set_blocking(fd, False)
        return cls(fd, name)

    def fileno(self) -> int:
        return self.fd

    def read(self) -> bytes | None:
        try:
            return os.read(self.fd, 65536)
        except BlockingIOError:
            return None

    def write(self, packet: bytes) -> None:
        os.write(self.fd, packet)

    def close(self) -> None:
        os.close(self.fd)
