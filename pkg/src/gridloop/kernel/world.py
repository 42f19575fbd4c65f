"""The co-simulation world: simulator registry, dataflow graph and lockstep loop."""

from __future__ import annotations

import heapq
import logging
import socket
from dataclasses import dataclass, field
from typing import Any

from gridloop.kernel.api import Simulator, model_attrs
from gridloop.kernel.remote import RemoteSimulator, SimulatorCrashed, SimulatorError, listen

log = logging.getLogger(__name__)

_MISSING = object()


class WorldError(Exception):
    pass


class DuplicateName(WorldError):
    pass


class UnknownEntity(WorldError):
    pass


class UnknownAttribute(WorldError):
    pass


class CycleError(WorldError):
    pass


@dataclass(frozen=True, order=True)
class EntityId:
    simulator_name: str
    path: str

    def __str__(self) -> str:
        return f"{self.simulator_name}.{self.path}"


@dataclass(frozen=True)
class Entity:
    id: EntityId
    model: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]

    @property
    def sid(self) -> str:
        return self.id.simulator_name

    @property
    def eid(self) -> str:
        return self.id.path

    @property
    def full_id(self) -> str:
        return str(self.id)


@dataclass(frozen=True)
class Connection:
    src: Entity
    src_attr: str
    dst: Entity
    dst_attr: str
    time_shifted: bool = False
    initial_data: Any = None


@dataclass
class RunReport:
    steps: int = 0
    exchanges: int = 0
    polls: dict[str, int] = field(default_factory=dict)
    failed_simulator: str | None = None
    error: str | None = None

    @property
    def aborted(self) -> bool:
        return self.failed_simulator is not None


class SimulationAborted(Exception):
    def __init__(self, report: RunReport) -> None:
        super().__init__(f"simulator {report.failed_simulator!r} failed: {report.error}")
        self.report = report


class _InProcess:
    """Gives an in-process simulator the submit/collect shape of a remote one."""

    def __init__(self, sim: Simulator) -> None:
        self.sim = sim
        self._outcome: tuple[bool, Any] | None = None

    def submit(self, method: str, *args, **kwargs) -> None:
        try:
            self._outcome = (True, getattr(self.sim, method)(*args, **kwargs))
        except Exception as exc:
            self._outcome = (False, exc)

    def collect(self, timeout: float | None = None) -> Any:
        ok, value = self._outcome
        self._outcome = None
        if not ok:
            raise SimulatorError(f"{type(value).__name__}: {value}") from value
        return value

    def call(self, method: str, *args, timeout: float | None = None, **kwargs) -> Any:
        self.submit(method, *args, **kwargs)
        return self.collect()

    def close(self) -> None:
        pass


class SimulatorHandle:
    def __init__(self, world: World, name: str, index: int, backend, meta: dict) -> None:
        self.world = world
        self.name = name
        self.index = index
        self.backend = backend
        self.meta = meta
        self.entities: dict[str, Entity] = {}

    @property
    def models(self) -> dict[str, list[str]]:
        out = {}
        for model in self.meta.get("models", {}):
            inputs, outputs = model_attrs(self.meta, model)
            out[model] = inputs + outputs
        return out

    @property
    def remote(self) -> bool:
        return isinstance(self.backend, RemoteSimulator)

    def create(self, num: int, model: str, **params) -> list[Entity]:
        if model not in self.meta.get("models", {}):
            raise UnknownEntity(f"{self.name} has no model {model!r}")
        inputs, outputs = model_attrs(self.meta, model)
        created = self.backend.call("create", num, model, **params)
        entities = []
        for item in created:
            eid = item["eid"]
            if eid in self.entities:
                raise DuplicateName(f"entity {self.name}.{eid} already exists")
            ent = Entity(EntityId(self.name, eid), item.get("type", model), tuple(inputs), tuple(outputs))
            self.entities[eid] = ent
            entities.append(ent)
        return entities

    def __repr__(self) -> str:
        return f"SimulatorHandle({self.name!r})"


class World:
    """Steps registered simulators in lockstep with a fixed step size (ms)."""

    def __init__(self, step_size: int = 1) -> None:
        if step_size < 1:
            raise ValueError("step size must be >= 1 ms")
        self.step_size = step_size
        self.time = 0
        self.simulators: dict[str, SimulatorHandle] = {}
        self.connections: list[Connection] = []
        self.report = RunReport()
        self.listener: socket.socket | None = None
        self._setup_done = False
        self._levels: list[list[SimulatorHandle]] | None = None
        self._shifted: dict[int, Any] = {}
        self._broken = False

    # -- registration -------------------------------------------------------

    def listen(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Open the TCP listener external simulators connect to."""
        if self.listener is None:
            self.listener = listen(host, port)
        return self.listener.getsockname()[:2]

    def register_simulator(self, name: str, sim, **init_params) -> SimulatorHandle:
        if name in self.simulators:
            raise DuplicateName(f"simulator {name!r} already registered")
        if self._setup_done:
            raise WorldError("cannot register simulators after the run started")
        backend = sim if isinstance(sim, RemoteSimulator) else _InProcess(sim)
        if isinstance(backend, RemoteSimulator):
            backend.name = name
        try:
            meta = backend.call("init", name, **init_params)
        except SimulatorCrashed:
            backend.close()
            raise
        handle = SimulatorHandle(self, name, len(self.simulators), backend, meta)
        self.simulators[name] = handle
        self.report.polls[name] = 0
        self._levels = None
        return handle

    def accept_simulator(self, name: str, timeout: float = 10.0, **init_params) -> SimulatorHandle:
        """Accept the next external simulator on the listener and register it."""
        if name in self.simulators:
            raise DuplicateName(f"simulator {name!r} already registered")
        if self.listener is None:
            self.listen()
        remote = RemoteSimulator.accept(self.listener, timeout=timeout, name=name)
        return self.register_simulator(name, remote, **init_params)

    # -- wiring -------------------------------------------------------------

    def _resolve(self, entity: Entity) -> Entity:
        handle = self.simulators.get(entity.sid)
        if handle is None or handle.entities.get(entity.eid) != entity:
            raise UnknownEntity(f"unknown entity {entity.full_id}")
        return entity

    def connect(
        self,
        src: Entity,
        dst: Entity,
        attrs: tuple[str, str],
        time_shifted: bool = False,
        initial_data: Any = _MISSING,
    ) -> Connection:
        self._resolve(src)
        self._resolve(dst)
        out_name, in_name = attrs
        if out_name not in src.outputs:
            raise UnknownAttribute(f"{src.full_id} has no output {out_name!r} (outputs: {src.outputs})")
        if in_name not in dst.inputs:
            raise UnknownAttribute(f"{dst.full_id} has no input {in_name!r} (inputs: {dst.inputs})")
        initial = None
        if time_shifted:
            if initial_data is _MISSING:
                raise WorldError("time-shifted connections need initial_data")
            if not isinstance(initial_data, dict) or out_name not in initial_data:
                raise WorldError(f"initial_data must map {out_name!r} to its step-0 value")
            initial = initial_data[out_name]
        conn = Connection(src, out_name, dst, in_name, time_shifted, initial)
        self.connections.append(conn)
        try:
            self._compute_levels()
        except CycleError:
            self.connections.pop()
            self._compute_levels()
            raise
        if time_shifted:
            self._shifted[len(self.connections) - 1] = initial
        return conn

    def _compute_levels(self) -> list[list[SimulatorHandle]]:
        handles = sorted(self.simulators.values(), key=lambda h: h.index)
        preds: dict[str, set[str]] = {h.name: set() for h in handles}
        for conn in self.connections:
            if conn.time_shifted:
                continue
            if conn.src.sid == conn.dst.sid:
                raise CycleError(f"non-shifted connection inside simulator {conn.src.sid!r}")
            preds[conn.dst.sid].add(conn.src.sid)
        indegree = {name: len(p) for name, p in preds.items()}
        succs: dict[str, list[str]] = {h.name: [] for h in handles}
        for name, p in preds.items():
            for s in p:
                succs[s].append(name)
        level = {name: 0 for name in preds}
        heap = [(self.simulators[n].index, n) for n, d in indegree.items() if d == 0]
        heapq.heapify(heap)
        seen = 0
        while heap:
            _, name = heapq.heappop(heap)
            seen += 1
            for nxt in succs[name]:
                level[nxt] = max(level[nxt], level[name] + 1)
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    heapq.heappush(heap, (self.simulators[nxt].index, nxt))
        if seen != len(handles):
            cyclic = sorted(n for n, d in indegree.items() if d > 0)
            raise CycleError(f"non-shifted connections form a cycle through {cyclic}")
        levels: list[list[SimulatorHandle]] = []
        for h in handles:
            while len(levels) <= level[h.name]:
                levels.append([])
            levels[level[h.name]].append(h)
        self._levels = levels
        return levels

    def step_order(self) -> list[str]:
        levels = self._levels if self._levels is not None else self._compute_levels()
        return [h.name for lvl in levels for h in lvl]

    # -- running ------------------------------------------------------------

    def _abort(self, handle: SimulatorHandle, exc: Exception) -> SimulationAborted:
        self._broken = True
        self.report.failed_simulator = handle.name
        self.report.error = str(exc)
        log.error("aborting run at t=%d: %s failed: %s", self.time, handle.name, exc)
        return SimulationAborted(self._snapshot())

    def _snapshot(self) -> RunReport:
        r = self.report
        return RunReport(r.steps, r.exchanges, dict(r.polls), r.failed_simulator, r.error)

    def _fan_out(self, handles: list[SimulatorHandle], method: str, args_for) -> dict[str, Any]:
        # All requests of one level go out before any reply is awaited, so
        # external simulators work concurrently.
        results = {}
        submitted = []
        for h in handles:
            try:
                h.backend.submit(method, *args_for(h))
            except (SimulatorCrashed, SimulatorError) as exc:
                raise self._abort(h, exc) from exc
            submitted.append(h)
        for h in submitted:
            try:
                results[h.name] = h.backend.collect()
            except (SimulatorCrashed, SimulatorError) as exc:
                raise self._abort(h, exc) from exc
        return results

    def _setup(self) -> None:
        handles = sorted(self.simulators.values(), key=lambda h: h.index)
        self._fan_out(handles, "setup_done", lambda h: ())
        self._setup_done = True

    def step(self, until: int) -> RunReport:
        """Run every simulator through ``[self.time, until)``."""
        if self._broken:
            raise WorldError("world was aborted; create a new one")
        if not self._setup_done:
            self._setup()
        levels = self._levels if self._levels is not None else self._compute_levels()
        incoming: dict[str, list[tuple[int, Connection]]] = {name: [] for name in self.simulators}
        wanted: dict[str, dict[str, list[str]]] = {name: {} for name in self.simulators}
        for idx, conn in enumerate(self.connections):
            incoming[conn.dst.sid].append((idx, conn))
            attrs = wanted[conn.src.sid].setdefault(conn.src.eid, [])
            if conn.src_attr not in attrs:
                attrs.append(conn.src_attr)
        shifted = [(idx, c) for idx, c in enumerate(self.connections) if c.time_shifted]

        while self.time < until:
            t = self.time
            data: dict[str, dict] = {}

            def inputs_for(h: SimulatorHandle):
                inputs: dict[str, dict[str, dict[str, Any]]] = {}
                for idx, conn in incoming[h.name]:
                    if conn.time_shifted:
                        value = self._shifted[idx]
                    else:
                        value = data.get(conn.src.sid, {}).get(conn.src.eid, {}).get(conn.src_attr)
                    inputs.setdefault(conn.dst.eid, {}).setdefault(conn.dst_attr, {})[conn.src.full_id] = value
                    self.report.exchanges += 1
                return (t, inputs)

            for level in levels:
                self._fan_out(level, "step", inputs_for)
                data.update(self._fan_out(level, "get_data", lambda h: (wanted[h.name],)))
                for h in level:
                    self.report.polls[h.name] += 1
            for idx, conn in shifted:
                self._shifted[idx] = data.get(conn.src.sid, {}).get(conn.src.eid, {}).get(conn.src_attr)
            self.time = t + self.step_size
            self.report.steps += 1
        return self._snapshot()

    run = step

    def shutdown(self) -> None:
        for h in sorted(self.simulators.values(), key=lambda h: h.index):
            try:
                h.backend.call("stop", timeout=5.0)
            except Exception as exc:
                log.debug("stop of %s failed: %s", h.name, exc)
            h.backend.close()
        if self.listener is not None:
            self.listener.close()
            self.listener = None
