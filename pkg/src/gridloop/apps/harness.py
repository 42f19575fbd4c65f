"""Application simulators: supervise SIL processes and relay grid values.

Each app runs as its own OS process next to its own ``vif`` process. The
default launcher has the two share a loopback device (a socketpair), so no
privileges are needed; ``NamespaceLauncher`` gives each app its own network
namespace with a real tun device instead. ``AppSimulator`` plugs the apps into the kernel:
grid readings go to the app's control channel and its setpoints come back.
"""

from __future__ import annotations

import json
import logging
import os
import selectors
import shutil
import signal
import socket
import subprocess
import sys
import time
from dataclasses import dataclass, field

from gridloop.kernel.api import Simulator
from gridloop.vif.device import DEVICE_FD_ENV, device_pair
from gridloop.vif.transport import open_tunnel_socket

log = logging.getLogger(__name__)


class AppSpawnError(RuntimeError):
    pass


class DeadApp(RuntimeError):
    pass


@dataclass
class AppSpec:
    name: str
    command: list[str]
    env: dict[str, str] = field(default_factory=dict)
    peer: str | None = None  # vif-sim tunnel endpoint, host:port
    ip: str | None = None
    buffer_limit: int = 4 * 1024 * 1024
    grid_binding: str | None = None
    shutdown_grace_ms: int = 2000

    def __post_init__(self):
        if not self.command:
            raise ValueError(f"app {self.name!r}: launch command is empty")


@dataclass
class ExitReport:
    name: str
    returncode: int | None
    graceful: bool = False
    hard_killed: bool = False
    already_exited: bool = False
    vif_returncode: int | None = None


class AppHandle:
    def __init__(self, spec: AppSpec, proc: subprocess.Popen, vif: subprocess.Popen | None) -> None:
        self.spec = spec
        self.proc = proc
        self.vif = vif
        self.events: list[dict] = []
        self._buf = b""
        self._replies: list[dict] = []
        if proc.stdout is not None:
            os.set_blocking(proc.stdout.fileno(), False)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def pids(self) -> list[int]:
        return [p.pid for p in (self.proc, self.vif) if p is not None]

    def alive(self) -> bool:
        return self.proc.poll() is None

    def drain(self) -> list[dict]:
        """Read whatever the app printed; returns the new events."""
        if self.proc.stdout is None:
            return []
        while True:
            try:
                chunk = os.read(self.proc.stdout.fileno(), 65536)
            except BlockingIOError:
                break
            except (OSError, ValueError):
                break
            if not chunk:
                break
            self._buf += chunk
        *lines, self._buf = self._buf.split(b"\n")
        new = []
        for line in lines:
            if not line.strip():
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                log.warning("%s: unparsable control line %r", self.name, line[:80])
                continue
            if "event" in msg:
                new.append(msg)
            else:
                self._replies.append(msg)
        self.events.extend(new)
        return new


class ProcessLauncher:
    """Default launcher: plain OS processes, loopback device, own session."""

    def __init__(self, python: str = sys.executable, vif_verbose: bool = False) -> None:
        self.python = python
        self.vif_verbose = vif_verbose

    def launch(self, spec: AppSpec) -> AppHandle:
        if not spec.peer:
            raise AppSpawnError(f"app {spec.name!r}: no vif-sim endpoint configured")
        vif_end, app_end = device_pair()
        env = dict(os.environ)
        env.update(spec.env)
        env["VIF_PEER"] = spec.peer
        env[DEVICE_FD_ENV] = str(app_end.fileno())
        if spec.ip:
            env["GRIDLOOP_APP_IP"] = spec.ip
        vif = None
        try:
            vif_cmd = [self.python, "-m", "gridloop.vif.vif", "--peer", spec.peer, "--transport", "loopback",
                       "--device-fd", str(vif_end.fileno()), "--buffer-limit", str(spec.buffer_limit)]
            if self.vif_verbose:
                vif_cmd.append("-v")
            vif = subprocess.Popen(vif_cmd, pass_fds=(vif_end.fileno(),), start_new_session=True,
                                   stdin=subprocess.DEVNULL)
            try:
                proc = subprocess.Popen(spec.command, env=env, pass_fds=(app_end.fileno(),),
                                        stdin=subprocess.PIPE, stdout=subprocess.PIPE, start_new_session=True)
            except OSError as exc:
                raise AppSpawnError(f"app {spec.name!r}: cannot start {spec.command[0]!r}: {exc}") from exc
        except BaseException:
            if vif is not None:
                vif.kill()
                vif.wait()
            raise
        finally:
            vif_end.close()
            app_end.close()
        return AppHandle(spec, proc, vif)


TUN_NAME = "tun0"


def namespaces_available() -> bool:
    """True when apps can get their own network namespace and tun device."""
    if not (shutil.which("unshare") and shutil.which("nsenter")) or not os.path.exists("/dev/net/tun"):
        return False
    try:
        probe = subprocess.run(["unshare", "--net", "true"], capture_output=True, timeout=10)
    except (OSError, subprocess.TimeoutExpired):
        return False
    return probe.returncode == 0


class NamespaceLauncher(ProcessLauncher):
    """Each app in its own network namespace behind a real tun device.

    vif starts first under ``unshare --net`` and creates the tun there; its
    tunnel socket is opened here, in the parent namespace, and inherited, so
    vif-sim stays reachable. The app joins the namespace with ``nsenter``
    once vif reports the device is up. Needs root (CAP_SYS_ADMIN).
    """

    def __init__(self, python: str = sys.executable, vif_verbose: bool = False, ready_timeout: float = 10.0) -> None:
        super().__init__(python, vif_verbose)
        self.ready_timeout = ready_timeout

    def launch(self, spec: AppSpec) -> AppHandle:
        if not spec.peer:
            raise AppSpawnError(f"app {spec.name!r}: no vif-sim endpoint configured")
        if not spec.ip:
            raise AppSpawnError(f"app {spec.name!r}: a tun device needs the app address")
        tunnel = open_tunnel_socket()
        ready_r, ready_w = os.pipe()
        vif = None
        try:
            vif_cmd = ["unshare", "--net", "--", self.python, "-m", "gridloop.vif.vif", "--peer", spec.peer,
                       "--transport", "tun", "--tun-name", TUN_NAME, "--tun-address", spec.ip,
                       "--tunnel-fd", str(tunnel.fileno()), "--ready-fd", str(ready_w),
                       "--buffer-limit", str(spec.buffer_limit)]
            if self.vif_verbose:
                vif_cmd.append("-v")
            try:
                vif = subprocess.Popen(vif_cmd, pass_fds=(tunnel.fileno(), ready_w), start_new_session=True,
                                       stdin=subprocess.DEVNULL)
            except OSError as exc:
                raise AppSpawnError(f"app {spec.name!r}: cannot start vif: {exc}") from exc
            os.close(ready_w)
            ready_w = -1
            with selectors.DefaultSelector() as sel:
                sel.register(ready_r, selectors.EVENT_READ)
                ok = sel.select(self.ready_timeout) and os.read(ready_r, 1) == b"1"
            if not ok:
                raise AppSpawnError(f"app {spec.name!r}: vif did not bring up {TUN_NAME} "
                                    f"(exit code {vif.poll()})")
            env = dict(os.environ)
            env.update(spec.env)
            env.pop(DEVICE_FD_ENV, None)
            env["VIF_PEER"] = spec.peer
            env["GRIDLOOP_TUN"] = TUN_NAME
            env["GRIDLOOP_APP_IP"] = spec.ip
            cmd = ["nsenter", f"--net=/proc/{vif.pid}/ns/net", "--", *spec.command]
            try:
                proc = subprocess.Popen(cmd, env=env, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                        start_new_session=True)
            except OSError as exc:
                raise AppSpawnError(f"app {spec.name!r}: cannot start {spec.command[0]!r}: {exc}") from exc
        except BaseException:
            if vif is not None:
                vif.kill()
                vif.wait()
            raise
        finally:
            tunnel.close()
            os.close(ready_r)
            if ready_w >= 0:
                os.close(ready_w)
        return AppHandle(spec, proc, vif)


def start_app(spec: AppSpec, launcher=None) -> AppHandle:
    return (launcher or ProcessLauncher()).launch(spec)


def _terminate(proc: subprocess.Popen, grace_s: float) -> tuple[bool, bool]:
    """(graceful, hard_killed)"""
    try:
        proc.send_signal(signal.SIGTERM)
    except ProcessLookupError:
        pass
    try:
        proc.wait(grace_s)
        return True, False
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()
        return False, True


def stop_app(handle: AppHandle, grace_ms: int | None = None) -> ExitReport:
    """SIGTERM, then SIGKILL once ``grace_ms`` has passed. Stops the vif too."""
    grace_s = (handle.spec.shutdown_grace_ms if grace_ms is None else grace_ms) / 1000
    report = ExitReport(handle.name, handle.proc.poll())
    if report.returncode is not None:
        report.already_exited = True
    else:
        report.graceful, report.hard_killed = _terminate(handle.proc, grace_s)
        report.returncode = handle.proc.returncode
    handle.drain()
    for stream in (handle.proc.stdin, handle.proc.stdout):
        if stream is not None:
            try:
                stream.close()
            except OSError:
                pass
    if handle.vif is not None:
        # on a loopback device the vif sees EOF once the app is gone; a tun
        # device outlives the app, so that vif is stopped after a short wait
        try:
            handle.vif.wait(1.0)
        except subprocess.TimeoutExpired:
            _terminate(handle.vif, grace_s)
        report.vif_returncode = handle.vif.returncode
    return report


def app_step(handle: AppHandle, readings: dict, t: int = 0, timeout: float = 10.0) -> dict:
    """Hand readings to the app and return the setpoints it answers with."""
    if not handle.alive():
        raise DeadApp(f"app {handle.name!r} exited with {handle.proc.returncode}")
    try:
        handle.proc.stdin.write(json.dumps({"t": t, "readings": readings}).encode() + b"\n")
        handle.proc.stdin.flush()
    except (BrokenPipeError, OSError) as exc:
        raise DeadApp(f"app {handle.name!r} closed its control channel") from exc
    deadline = time.monotonic() + timeout
    with selectors.DefaultSelector() as sel:
        sel.register(handle.proc.stdout, selectors.EVENT_READ)
        while True:
            handle.drain()
            if handle._replies:
                return handle._replies.pop(0).get("setpoints") or {}
            if handle.proc.poll() is not None:
                raise DeadApp(f"app {handle.name!r} exited with {handle.proc.returncode} mid-step")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DeadApp(f"app {handle.name!r} did not answer within {timeout} s")
            sel.select(min(remaining, 0.1))


class AppSimulator(Simulator):
    """Kernel-facing simulator with one ``App`` entity per grid-bound app.

    ``readings`` (input) are the merged values from all connected sources;
    ``setpoints`` (output) are whatever the app answered in this step.
    """

    meta = {
        "models": {
            "App": {"public": True, "params": ["name"], "inputs": ["readings"], "outputs": ["setpoints"]},
        }
    }

    def __init__(self, handles: dict[str, AppHandle]) -> None:
        self.handles = handles
        self.entities: dict[str, str] = {}
        self.setpoints: dict[str, dict] = {}

    def create(self, num, model, name=None):
        if name not in self.handles:
            raise KeyError(f"no running app named {name!r}")
        eid = f"app-{name}"
        self.entities[eid] = name
        self.setpoints[eid] = {}
        return [{"eid": eid, "type": model}]

    def step(self, time, inputs):
        for eid, name in self.entities.items():
            readings = {}
            for value in inputs.get(eid, {}).get("readings", {}).values():
                if value:
                    readings.update(value)
            self.setpoints[eid] = app_step(self.handles[name], readings, time) if readings else {}

    def get_data(self, outputs):
        return {eid: {"setpoints": self.setpoints[eid] or None} for eid in outputs}


def reap_orphans(handles) -> list[int]:
    """Pids of supervised processes still running (should be empty)."""
    return [p.pid for h in handles for p in (h.proc, h.vif) if p is not None and p.poll() is None]
