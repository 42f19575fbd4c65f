"""Toy radial grid standing in for the power-grid simulator.

Not a load-flow engine. Line flow is the sum of the net loads below the
line, and bus voltage sags linearly with the loading of the line feeding
it::

    v_pu = max(0.9, 1 - 0.01 * |flow| / capacity_kw)

The root bus sits at 1.0 p.u. The rule is non-physical on purpose: it only
has to give applications readings that react to their own setpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from gridloop.kernel.api import Simulator

V_FLOOR = 0.9
V_SLOPE = 0.01


class GridError(ValueError):
    pass


@dataclass
class Bus:
    id: str
    base_load_kw: float = 0.0
    attached_apps: list[str] = field(default_factory=list)
    delta_kw: float = 0.0

    def __post_init__(self):
        if self.base_load_kw < 0:
            raise GridError(f"bus {self.id!r}: base load must be >= 0")

    @property
    def net_kw(self) -> float:
        return self.base_load_kw + self.delta_kw


@dataclass
class Line:
    id: str
    parent: str
    child: str
    capacity_kw: float

    def __post_init__(self):
        if self.capacity_kw <= 0:
            raise GridError(f"line {self.id!r}: capacity must be > 0")


@dataclass
class Reading:
    v_pu: float
    p_kw: float


class Grid:
    def __init__(self, buses: list[Bus], lines: list[Line]) -> None:
        self.buses = {b.id: b for b in buses}
        if len(self.buses) != len(buses):
            raise GridError("duplicate bus id")
        self.lines = {ln.id: ln for ln in lines}
        self.feeder: dict[str, Line] = {}
        self.children: dict[str, list[str]] = {b: [] for b in self.buses}
        for ln in lines:
            for end in (ln.parent, ln.child):
                if end not in self.buses:
                    raise GridError(f"line {ln.id!r}: unknown bus {end!r}")
            if ln.child in self.feeder:
                raise GridError(f"bus {ln.child!r} fed by two lines: not radial")
            self.feeder[ln.child] = ln
            self.children[ln.parent].append(ln.child)
        roots = [b for b in self.buses if b not in self.feeder]
        if len(roots) != 1:
            raise GridError(f"a radial grid needs exactly one root bus, found {roots}")
        self.root = roots[0]
        self.order = self._preorder()
        if len(self.order) != len(self.buses):
            raise GridError("grid contains a cycle or an unreachable bus")

    def _preorder(self) -> list[str]:
        out, stack, seen = [], [self.root], set()
        while stack:
            b = stack.pop()
            if b in seen:
                break
            seen.add(b)
            out.append(b)
            stack.extend(reversed(self.children[b]))
        return out


def apply_setpoints(grid: Grid, deltas: dict[str, float]) -> None:
    """Add net-load changes (kW); they persist for all later steps."""
    unknown = sorted(set(deltas) - set(grid.buses))
    if unknown:
        raise GridError(f"unknown buses {unknown}")
    for bus, delta in deltas.items():
        grid.buses[bus].delta_kw += delta


def line_flows(grid: Grid) -> dict[str, float]:
    subtree = {b: grid.buses[b].net_kw for b in grid.buses}
    for b in reversed(grid.order):
        ln = grid.feeder.get(b)
        if ln is not None:
            subtree[ln.parent] += subtree[b]
    return {ln.id: subtree[ln.child] for ln in grid.lines.values()}


def grid_step(grid: Grid, t: int = 0) -> tuple[dict[str, Reading], dict[str, float]]:
    """(bus readings, line loading fractions) for the current injections."""
    flows = line_flows(grid)
    loading = {lid: abs(f) / grid.lines[lid].capacity_kw for lid, f in flows.items()}
    readings = {}
    for bus in grid.order:
        ln = grid.feeder.get(bus)
        v = 1.0 if ln is None else max(V_FLOOR, 1.0 - V_SLOPE * loading[ln.id])
        readings[bus] = Reading(v, grid.buses[bus].net_kw)
    return readings, loading


class GridSimulator(Simulator):
    """One ``Bus`` entity per bus: ``setpoint`` in ({"p_kw": delta}), ``reading`` out."""

    meta = {
        "models": {
            "Bus": {"public": True, "params": ["bus"], "inputs": ["setpoint"], "outputs": ["reading"]},
        }
    }

    def __init__(self, grid: Grid) -> None:
        self.grid = grid
        self.entities: dict[str, str] = {}
        self.readings: dict[str, Reading] = {}
        self.loading: dict[str, float] = {}
        self.history: list[tuple[int, dict[str, float]]] = []

    def create(self, num, model, bus=None):
        if bus not in self.grid.buses:
            raise GridError(f"unknown bus {bus!r}")
        eid = f"bus-{bus}"
        self.entities[eid] = bus
        return [{"eid": eid, "type": model}]

    def step(self, time, inputs):
        deltas = {}
        for eid, attrs in inputs.items():
            for value in attrs.get("setpoint", {}).values():
                if value and "p_kw" in value:
                    deltas[self.entities[eid]] = deltas.get(self.entities[eid], 0.0) + float(value["p_kw"])
        apply_setpoints(self.grid, deltas)
        self.readings, self.loading = grid_step(self.grid, time)
        self.history.append((time, {b: r.v_pu for b, r in self.readings.items()}))

    def get_data(self, outputs):
        out = {}
        for eid in outputs:
            r = self.readings[self.entities[eid]]
            out[eid] = {"reading": {"v_pu": r.v_pu, "p_kw": r.p_kw}}
        return out
