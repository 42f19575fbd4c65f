"""Assemble a world from a scenario, run it, and measure.

Per world the data path is

    app -> vif -> vif-sim -> kernel -> ict (netsim) -> kernel -> vif-sim' -> vif' -> app'

with every vif, vif-sim and app a separate OS process. RTT samples come
from the network model's event log (request transit plus reply transit,
matched by ICMP id/seq); throughput samples are reported by the bundled
bulk sender in bytes per simulated ms (= kB/s).
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
import sys
import time
from dataclasses import dataclass, field

from gridloop import ip as iplib
from gridloop.apps.harness import AppHandle, AppSimulator, AppSpec, ProcessLauncher, stop_app
from gridloop.apps.testapps.apps import ident_for
from gridloop.bench.scenario import AppDecl, ScenarioSpec, build_grid, load_scenario
from gridloop.grid import GridSimulator
from gridloop.kernel.world import SimulationAborted, World
from gridloop.netsim.simulator import NetworkSimulator
from gridloop.netsim.topology import Topology, build_topology
from gridloop.vif.transport import TransportViolation, assert_datagram_only, open_tunnel_socket

log = logging.getLogger(__name__)

UNITS = {"rtt": "ms", "bulk_throughput": "kB/s"}
CHUNK_MS = 20


class RunFailed(RuntimeError):
    def __init__(self, component: str, message: str) -> None:
        super().__init__(f"{component}: {message}")
        self.component = component


@dataclass
class Sample:
    measurement: str
    node_count: int
    repeat: int
    pair: int
    value: float | None
    status: str = "ok"  # ok | lost | failed


@dataclass
class WorldStats:
    node_count: int
    sim_ms: int
    wall_s: float
    steps: int
    polls: dict[str, int]
    area_counters: dict[str, dict[str, int]]
    counters: dict[str, int]

    @property
    def wall_ms_per_sim_ms(self) -> float:
        return self.wall_s * 1000 / self.sim_ms if self.sim_ms else 0.0


@dataclass
class BenchReport:
    scenario: str
    seed: int
    mux: bool
    measurements: list[str] = field(default_factory=list)
    samples: list[Sample] = field(default_factory=list)
    worlds: list[WorldStats] = field(default_factory=list)
    self_checks: dict[str, bool] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    wall_s: float = 0.0
    extras: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[str, int, int, float, str]]:
        """CSV rows: one per (measurement, node count, repeat), the mean over pairs.

        A repeat in which every pair was lost or failed has no value and no row.
        """
        grouped: dict[tuple[str, int, int], list[float]] = {}
        for s in self.samples:
            key = (s.measurement, s.node_count, s.repeat)
            grouped.setdefault(key, [])
            if s.status == "ok":
                grouped[key].append(s.value)
        order = {m: i for i, m in enumerate(self.measurements)}
        rows = []
        for (m, n, r), values in sorted(grouped.items(), key=lambda kv: (order.get(kv[0][0], 99), kv[0][1:])):
            if values:
                rows.append((m, n, r, math.fsum(values) / len(values), UNITS[m]))
        return rows

    def aggregates(self) -> dict[tuple[str, int], dict[str, float]]:
        from gridloop.bench.outputs import aggregate_rows

        return aggregate_rows(self.rows())

    def accounting(self) -> dict[tuple[str, int], dict[str, int]]:
        out: dict[tuple[str, int], dict[str, int]] = {}
        for s in self.samples:
            c = out.setdefault((s.measurement, s.node_count), {"ok": 0, "lost": 0, "failed": 0})
            c[s.status] += 1
        return out

    @property
    def passed(self) -> bool:
        return all(self.self_checks.values())

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "mux": self.mux,
            "wall_s": round(self.wall_s, 3),
            "self_checks": self.self_checks,
            "accounting": {f"{m}@{n}": c for (m, n), c in self.accounting().items()},
            "aggregates": {f"{m}@{n}": a for (m, n), a in self.aggregates().items()},
            "worlds": [
                {"node_count": w.node_count, "sim_ms": w.sim_ms, "wall_s": round(w.wall_s, 3),
                 "wall_ms_per_sim_ms": round(w.wall_ms_per_sim_ms, 4), "area_counters": w.area_counters}
                for w in self.worlds
            ],
            "notes": self.notes,
        }


# -- measurements from logs ---------------------------------------------------


def echo_index(topology: Topology) -> dict[tuple, object]:
    """(src, dst, ident, seq, is_reply) -> packet record, for every ICMP echo seen."""
    index = {}
    for rec in topology.records:
        if rec.src_ip is None:
            continue
        echo = iplib.parse_icmp_echo(rec.data)
        if echo is not None:
            index.setdefault((echo.src, echo.dst, echo.ident, echo.seq, echo.reply), rec)
    return index


def measure_rtt(topology: Topology, pairs: list[tuple[str, str]], repeats: int, timeout: float,
                node_count: int) -> list[Sample]:
    """Event-log RTT per pair and repeat: request transit + reply transit (ms)."""
    index = echo_index(topology)
    samples = []
    for k in range(repeats):
        for p, (client_ip, server_ip) in enumerate(pairs):
            ident = ident_for(client_ip)
            req = index.get((client_ip, server_ip, ident, k, False))
            rep = index.get((server_ip, client_ip, ident, k, True))
            if (
                req is None or rep is None or req.status != "delivered" or rep.status != "delivered"
                or rep.delivery_time - req.ingress_time > timeout
            ):
                samples.append(Sample("rtt", node_count, k, p, None, "lost"))
                continue
            samples.append(Sample("rtt", node_count, k, p, req.transit + rep.transit))
    return samples


def measure_bulk_throughput(sender_events: list[list[dict]], repeats: int, node_count: int) -> list[Sample]:
    """Throughput per pair and repeat from the senders' transfer reports (kB/s)."""
    samples = []
    for k in range(repeats):
        for p, events in enumerate(sender_events):
            result = next((e for e in events if e.get("run") == k and e["event"] in ("transfer_done", "transfer_failed")), None)
            if result is None or result["event"] == "transfer_failed" or result.get("kBps") is None:
                samples.append(Sample("bulk_throughput", node_count, k, p, None, "failed"))
            else:
                samples.append(Sample("bulk_throughput", node_count, k, p, float(result["kBps"])))
    return samples


def path_capacity_kBps(topology: Topology, src: str, dst: str) -> float:
    nodes = topology.path(src, dst)
    rate = min(topology.adjacency[a][b].data_rate for a, b in zip(nodes, nodes[1:]))
    return rate / 8 / 1000


# -- one world ------------------------------------------------------------------


class WorldRun:
    """Processes and simulators of one world (one node count)."""

    def __init__(self, spec: ScenarioSpec, node_count: int | None, seed: int, mux: bool = False,
                 start_delay_s: float = 0.0, launcher=None, tock_timeout: float = 20.0) -> None:
        self.spec = spec
        self.seed = seed
        self.mux = mux
        self.start_delay_s = start_delay_s
        self.launcher = launcher or ProcessLauncher()
        self.tock_timeout = tock_timeout
        self.topology = build_topology(spec.network_spec(node_count, seed))
        self.apps: list[AppDecl] = spec.apps(node_count)
        self.app_by_name = {a.name: a for a in self.apps}
        self.ips = {a.name: self.topology.nodes[a.node].ip for a in self.apps}
        pair_sets = [spec.pairs(m, node_count) for m in spec.measurements]
        self.node_count = node_count if node_count is not None else max((len(p) for p in pair_sets), default=0)
        self.world = World()
        self.handles: dict[str, AppHandle] = {}
        self.vifsims: list[subprocess.Popen] = []
        self.tunnels: dict[str, tuple[str, int]] = {}
        self.grid_sim: GridSimulator | None = None
        self.checks: dict[str, bool] = {}
        self.notes: list[str] = []
        self.wall_s = 0.0
        self.free_run = any(not a.clocked for a in self.apps)
        self._finished: set[int] = set()
        self._replies: dict[tuple, object] = {}
        self._scan_pos = 0

    # configuration handed to the bundled apps

    def _measurement_end(self) -> int:
        end = 0
        for m in self.spec.measurements:
            if m["type"] == "rtt":
                end = max(end, m["start"] + m["repeats"] * m["interval"])
        return end

    def app_command(self, app: AppDecl) -> list[str]:
        if app.kind == "command":
            return list(app.command)
        config = dict(app.config)
        if app.kind == "client":
            for m in self.spec.measurements:
                pairs = self.spec.pairs(m, self.node_count if self.spec.sweep else None)
                server = next((s for c, s in pairs if c == app.name), None)
                if server is None:
                    continue
                if m["type"] == "rtt" and "ping" not in config:
                    config["ping"] = {"target": self.ips[server], "count": m["repeats"], "interval": m["interval"],
                                      "start": m["start"], "size": m["size"], "wait_reply": m["wait_reply"],
                                      "timeout": m["timeout"]}
                elif m["type"] == "bulk_throughput" and "bulk" not in config:
                    start = m.get("start", self._measurement_end() + 10)
                    config["bulk"] = {"target": self.ips[server], "nbytes": m["bytes"], "repeats": m["repeats"],
                                      "interval": m["interval"], "start": start, "window": m["window"],
                                      "segment": m["segment"], "rto": m["rto"], "stall": m["stall"]}
        cmd = [sys.executable, "-m", "gridloop.apps.testapps", app.kind, "--config", json.dumps(config, sort_keys=True)]
        if not app.clocked:
            cmd.append("--free-run")
        return cmd

    # setup

    def _spawn_vifsim(self, udp, mode: str) -> subprocess.Popen:
        host, port = self.kernel_address
        cmd = [sys.executable, "-m", "gridloop.vif.vifsim", "--kernel", f"{host}:{port}",
               "--listen-fd", str(udp.fileno()), "--mode", mode, "--tock-timeout", str(self.tock_timeout)]
        try:
            return subprocess.Popen(cmd, pass_fds=(udp.fileno(),), stdin=subprocess.DEVNULL)
        finally:
            udp.close()

    def setup(self) -> None:
        self.kernel_address = self.world.listen()
        self.ict = NetworkSimulator(self.topology)
        self.world.register_simulator("ict", self.ict)
        if self.spec.grid:
            self.grid_sim = GridSimulator(build_grid(self.spec.grid))
            self.world.register_simulator("grid", self.grid_sim)
        tunnel_socks = {}
        if self.mux:
            udp = open_tunnel_socket()
            shared = ("127.0.0.1", udp.getsockname()[1])
            tunnel_socks["*"] = udp
            for a in self.apps:
                self.tunnels[a.name] = shared
        else:
            for a in self.apps:
                udp = open_tunnel_socket()
                tunnel_socks[a.name] = udp
                self.tunnels[a.name] = ("127.0.0.1", udp.getsockname()[1])
        if self.start_delay_s:
            # applications (and their vifs) come up first and must buffer
            self._start_apps()
            time.sleep(self.start_delay_s)
        vif_handles = {}
        if self.mux:
            self.vifsims.append(self._spawn_vifsim(tunnel_socks["*"], "mux"))
            self._accept("vifsim")
            for a in self.apps:
                vif_handles[a.name] = self.world.simulators["vifsim"]
        else:
            for a in self.apps:
                self.vifsims.append(self._spawn_vifsim(tunnel_socks[a.name], "per-container"))
                vif_handles[a.name] = self._accept(f"vifsim-{a.name}")
        app_sim = None
        if any(a.grid_binding for a in self.apps):
            self._start_apps()
            app_sim = self.world.register_simulator("appsim", AppSimulator(self.handles))
        for a in self.apps:
            vif = vif_handles[a.name].create(1, "vif", ip=self.ips[a.name], clocked=a.clocked)[0]
            node = self.world.simulators["ict"].create(1, "NetworkNode", node=a.node, app=a.name)[0]
            self.world.connect(vif, node, ("tx", "rx"))
            self.world.connect(node, vif, ("tx", "rx"), time_shifted=True, initial_data={"tx": None})
            if a.grid_binding:
                bus = self.world.simulators["grid"].create(1, "Bus", bus=a.grid_binding)[0]
                ent = app_sim.create(1, "App", name=a.name)[0]
                self.world.connect(bus, ent, ("reading", "readings"))
                self.world.connect(ent, bus, ("setpoints", "setpoint"), time_shifted=True,
                                   initial_data={"setpoints": None})
        self._start_apps()
        self.checks["one_to_one"] = (
            len(self.handles) == len(self.apps)
            and sum(len(h.entities) for n, h in self.world.simulators.items() if n.startswith("vifsim")) == len(self.apps)
        )

    def _accept(self, name: str):
        try:
            return self.world.accept_simulator(name, timeout=30.0)
        except Exception as exc:
            raise RunFailed(name, f"did not register: {exc}") from exc

    def _start_apps(self) -> None:
        for a in self.apps:
            if a.name in self.handles:
                continue
            host, port = self.tunnels[a.name]
            spec = AppSpec(a.name, self.app_command(a), peer=f"{host}:{port}", ip=self.ips[a.name],
                           buffer_limit=a.buffer_limit, grid_binding=a.grid_binding,
                           shutdown_grace_ms=a.shutdown_grace_ms)
            self.handles[a.name] = self.launcher.launch(spec)

    # run

    def _echo_replies(self) -> dict[tuple, object]:
        """Echo replies injected so far, scanning only records not yet seen."""
        records = self.topology.records
        for rec in records[self._scan_pos:]:
            if rec.src_ip is None:
                continue
            echo = iplib.parse_icmp_echo(rec.data)
            if echo is not None and echo.reply:
                self._replies.setdefault((echo.src, echo.dst, echo.ident, echo.seq), rec)
        self._scan_pos = len(records)
        return self._replies

    def _done(self) -> bool:
        t = self.world.time
        for i, m in enumerate(self.spec.measurements):
            if i in self._finished:
                continue
            pairs = self.spec.pairs(m, self.node_count if self.spec.sweep else None)
            if m["type"] == "rtt":
                # latest possible send time of request k
                gap = m["interval"] + m["timeout"] if m["wait_reply"] else m["interval"]
                last_send = m["start"] + (m["repeats"] - 1) * gap
                if t <= last_send and not m["wait_reply"]:
                    return False
                if t <= last_send + m["timeout"]:
                    replies = self._echo_replies()
                    for c, s in pairs:
                        ident = ident_for(self.ips[c])
                        for k in range(m["repeats"]):
                            sent = m["start"] + k * gap
                            if t > sent + m["timeout"]:
                                continue
                            rec = replies.get((self.ips[s], self.ips[c], ident, k))
                            if rec is None or rec.status == "in_flight":
                                return False
            else:
                for c, _ in pairs:
                    h = self.handles[c]
                    h.drain()
                    finished = {e.get("run") for e in h.events if e["event"] in ("transfer_done", "transfer_failed")}
                    if len(finished) < m["repeats"]:
                        return False
            self._finished.add(i)
        return True

    def run(self) -> WorldStats:
        started = time.monotonic()
        checked_transport = False
        report = self.world.report
        try:
            while self.world.time < self.spec.duration:
                until = min(self.world.time + CHUNK_MS, self.spec.duration)
                report = self.world.step(until)
                if self.free_run:
                    # free-running apps live on wall-clock time: keep the simulation from outrunning them
                    lag = self.world.time / 1000 - (time.monotonic() - started)
                    if lag > 0:
                        time.sleep(lag)
                if not checked_transport:
                    self.check_transport()
                    checked_transport = True
                dead = [n for n, h in self.handles.items() if not h.alive()]
                if dead:
                    raise RunFailed(f"app {dead[0]}", f"exited with {self.handles[dead[0]].proc.returncode}")
                if self._done():
                    break
        except SimulationAborted as exc:
            raise RunFailed(exc.report.failed_simulator, exc.report.error) from exc
        finally:
            self.wall_s = time.monotonic() - started
        if self.world.time >= self.spec.duration:
            self.notes.append(f"world with {self.node_count} pairs hit the duration cap {self.spec.duration} ms")
        self.checks["conservation"] = self.topology.conservation_holds()
        vif_sims = [n for n in self.world.simulators if n.startswith("vifsim")]
        self.checks["one_poll_per_step"] = all(report.polls[n] == report.steps for n in vif_sims)
        return WorldStats(self.node_count, self.world.time, self.wall_s, report.steps, dict(report.polls),
                          self.topology.area_summary(), dict(self.topology.counters))

    def check_transport(self) -> None:
        vif_pids = [h.vif.pid for h in self.handles.values() if h.vif is not None]
        try:
            assert_datagram_only(vif_pids, [p.pid for p in self.vifsims], self.kernel_address[1])
            self.checks["datagram_only"] = True
        except TransportViolation as exc:
            log.error("%s", exc)
            self.checks["datagram_only"] = False

    def samples(self) -> list[Sample]:
        out = []
        for m in self.spec.measurements:
            pairs = self.spec.pairs(m, self.node_count if self.spec.sweep else None)
            if m["type"] == "rtt":
                ips = [(self.ips[c], self.ips[s]) for c, s in pairs]
                out.extend(measure_rtt(self.topology, ips, m["repeats"], m["timeout"], self.node_count))
            else:
                for h in self.handles.values():
                    h.drain()
                events = [self.handles[c].events for c, _ in pairs]
                got = measure_bulk_throughput(events, m["repeats"], self.node_count)
                caps = [path_capacity_kBps(self.topology, self.app_by_name[c].node, self.app_by_name[s].node)
                        for c, s in pairs]
                self.checks["capacity_bound"] = self.checks.get("capacity_bound", True) and all(
                    s.value <= caps[s.pair] for s in got if s.status == "ok"
                )
                out.extend(got)
        return out

    def teardown(self) -> None:
        self.world.shutdown()
        for h in self.handles.values():
            stop_app(h)
        for p in self.vifsims:
            try:
                p.wait(5)
            except subprocess.TimeoutExpired:
                p.kill()
                p.wait()
        leftovers = [h.name for h in self.handles.values() if h.proc.poll() is None or (h.vif and h.vif.poll() is None)]
        leftovers += [str(p.pid) for p in self.vifsims if p.poll() is None]
        self.checks["no_orphans"] = not leftovers


def run_scenario(spec_or_path, seed: int | None = None, mux: bool | None = None, start_delay_s: float = 0.0,
                 launcher=None, keep_worlds: bool = False) -> BenchReport:
    spec = spec_or_path if isinstance(spec_or_path, ScenarioSpec) else load_scenario(spec_or_path)
    seed = spec.seed if seed is None else seed
    mux = spec.mux if mux is None else mux
    report = BenchReport(spec.name, seed, mux, measurements=[m["type"] for m in spec.measurements])
    started = time.monotonic()
    checks: dict[str, bool] = {}
    for count in spec.node_counts:
        run = WorldRun(spec, count, seed, mux, start_delay_s, launcher)
        try:
            run.setup()
            stats = run.run()
            report.samples.extend(run.samples())
            report.worlds.append(stats)
        finally:
            run.teardown()
        for key, ok in run.checks.items():
            checks[key] = checks.get(key, True) and ok
        report.notes.extend(run.notes)
        if run.grid_sim is not None:
            report.extras.setdefault("grid_history", []).append(run.grid_sim.history)
        if keep_worlds:
            report.extras.setdefault("worlds", []).append(run)
    repeats = {m["type"]: m["repeats"] for m in spec.measurements}
    pairs = {}
    for m in spec.measurements:
        for count in spec.node_counts:
            n = len(spec.pairs(m, count))
            pairs[(m["type"], count if count is not None else n)] = n
    acct = report.accounting()
    checks["sample_accounting"] = all(
        sum(acct.get(key, {}).values()) == repeats[key[0]] * n for key, n in pairs.items()
    )
    report.self_checks = checks
    report.wall_s = time.monotonic() - started
    return report
