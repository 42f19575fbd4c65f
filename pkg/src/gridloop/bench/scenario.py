"""Scenario files: YAML documents checked against a shipped JSON schema.

A scenario either lists its network explicitly (``subnets``, ``links``,
``apps``) or asks for a ``sweep``: one generated world per node count with
that many client/server pairs, clients behind router ``rc`` and servers
behind router ``rs``, joined by a single backbone link.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from gridloop.addressing import SUBNETS_PER_AREA, AreaKind
from gridloop.netsim.delay import model_for
from gridloop.netsim.topology import AreaConfig, LinkSpec, NetworkSpec, NodeSpec, TopologyError, build_topology

MEASUREMENT_DEFAULTS = {
    "rtt": {"repeats": 10, "interval": 100, "start": 10, "timeout": 5000, "size": 56, "wait_reply": False},
    "bulk_throughput": {"repeats": 3, "interval": 1, "bytes": 100_000, "window": 32,
                        "segment": 1400, "rto": 200, "stall": 2000},
}
DEFAULT_DURATION = 60_000


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]) -> None:
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {e}" for e in errors))
        self.errors = errors


def _schema() -> dict:
    text = resources.files("gridloop.bench").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


@dataclass
class AppDecl:
    name: str
    node: str
    kind: str = "server"
    command: list[str] | None = None
    config: dict = field(default_factory=dict)
    clocked: bool = True
    grid_binding: str | None = None
    shutdown_grace_ms: int = 2000
    buffer_limit: int = 4 * 1024 * 1024


@dataclass
class ScenarioSpec:
    raw: dict
    name: str
    seed: int
    duration: int
    mux: bool
    measurements: list[dict]
    grid: dict | None = None
    sweep: dict | None = None
    path: Path | None = None

    @property
    def node_counts(self) -> list[int | None]:
        """Worlds to run: one per sweep count, or a single explicit world."""
        return list(self.sweep["node_counts"]) if self.sweep else [None]

    def area_configs(self) -> dict[AreaKind, AreaConfig]:
        out = {}
        for key, cfg in (self.raw.get("areas") or {}).items():
            area = AreaKind.parse(key)
            out[area] = AreaConfig(
                model_for(area, **cfg.get("params", {})),
                cfg.get("data_rate"),
                cfg.get("delay", True),
                cfg.get("queue_capacity", 1000),
            )
        return out

    def network_spec(self, node_count: int | None = None, seed: int | None = None) -> NetworkSpec:
        seed = self.seed if seed is None else seed
        if node_count is None:
            nodes, links = _explicit_network(self.raw)
        else:
            nodes, links = _pairs_network(node_count, self.sweep)
        return NetworkSpec(nodes, links, seed, self.area_configs())

    def apps(self, node_count: int | None = None) -> list[AppDecl]:
        if node_count is None:
            return [
                AppDecl(
                    a["name"], a["node"], a.get("kind", "command" if a.get("command") else "server"),
                    a.get("command"), dict(a.get("config", {})), a.get("clocked", not a.get("command")),
                    a.get("grid_binding"), a.get("shutdown_grace_ms", 2000), a.get("buffer_limit", 4 * 1024 * 1024),
                )
                for a in self.raw.get("apps", [])
            ]
        apps = []
        for i in range(node_count):
            apps.append(AppDecl(f"client{i}", f"c{i}", "client"))
            apps.append(AppDecl(f"server{i}", f"s{i}", "server"))
        return apps

    def pairs(self, measurement: dict, node_count: int | None = None) -> list[tuple[str, str]]:
        if node_count is not None:
            return [(f"client{i}", f"server{i}") for i in range(node_count)]
        return [tuple(p) for p in measurement.get("pairs", [])]


def _explicit_network(raw: dict) -> tuple[list[NodeSpec], list[LinkSpec]]:
    app_nodes = {a["node"] for a in raw.get("apps", [])}
    nodes = []
    for sn in raw.get("subnets", []):
        area = AreaKind.parse(sn["area"])
        for r in sn.get("routers", []):
            nodes.append(NodeSpec(r, "router", area, sn["index"]))
        for h in sn.get("hosts", []):
            nodes.append(NodeSpec(h, "app-gateway" if h in app_nodes else "host", area, sn["index"]))
    links = [
        LinkSpec(ln["a"], ln["b"], ln.get("data_rate"), AreaKind.parse(ln["area"]) if ln.get("area") else None,
                 ln.get("queue_capacity"))
        for ln in raw.get("links", [])
    ]
    return nodes, links


def _pairs_network(n: int, sweep: dict) -> tuple[list[NodeSpec], list[LinkSpec]]:
    area = AreaKind.parse(sweep.get("area", "dedicated"))
    nodes = [NodeSpec("rc", "router", area, 0), NodeSpec("rs", "router", area, 1)]
    links = [LinkSpec("rc", "rs", sweep.get("backbone_rate"))]
    for i in range(n):
        nodes.append(NodeSpec(f"c{i}", "app-gateway", area, 0))
        nodes.append(NodeSpec(f"s{i}", "app-gateway", area, 1))
        links.append(LinkSpec("rc", f"c{i}", sweep.get("access_rate")))
        links.append(LinkSpec("rs", f"s{i}", sweep.get("access_rate")))
    return nodes, links


def parse_scenario(raw, path: Path | None = None) -> ScenarioSpec:
    """Validate a loaded document; every problem is reported in one ScenarioError."""
    if not isinstance(raw, dict):
        raise ScenarioError(["scenario must be a mapping"])
    validator = jsonschema.Draft202012Validator(_schema())
    errors = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        errors.append(f"{where}: {err.message}")
    if errors:
        raise ScenarioError(errors)

    raw = copy.deepcopy(raw)
    measurements = []
    for m in raw["measurements"]:
        full = dict(MEASUREMENT_DEFAULTS[m["type"]])
        full.update(m)
        measurements.append(full)
    spec = ScenarioSpec(raw, raw["name"], raw["seed"], raw.get("duration", DEFAULT_DURATION), raw.get("mux", False),
                        measurements, raw.get("grid"), raw.get("sweep"), path)
    errors.extend(_semantic_errors(spec))
    if errors:
        raise ScenarioError(errors)
    return spec


def _semantic_errors(spec: ScenarioSpec) -> list[str]:
    raw = spec.raw
    errors = []
    for key, cfg in (raw.get("areas") or {}).items():
        try:
            model_for(key, **cfg.get("params", {}))
        except (TypeError, ValueError) as exc:
            errors.append(f"areas/{key}: {exc}")
    if spec.sweep:
        for key in ("subnets", "links", "apps"):
            if raw.get(key):
                errors.append(f"{key}: not allowed together with sweep (the sweep generates the network)")
        for i, m in enumerate(spec.measurements):
            if m.get("pairs"):
                errors.append(f"measurements/{i}/pairs: pairs are generated by the sweep")
        if errors:
            return errors
    else:
        errors.extend(_explicit_errors(spec))
    if not errors:
        for count in spec.node_counts:
            try:
                build_topology(spec.network_spec(count))
            except (TopologyError, ValueError) as exc:
                errors.append(f"network{'' if count is None else f' ({count} pairs)'}: {exc}")
    return errors


def _explicit_errors(spec: ScenarioSpec) -> list[str]:
    raw = spec.raw
    errors = []
    nodes: dict[str, str] = {}
    for i, sn in enumerate(raw.get("subnets", [])):
        if sn["index"] >= SUBNETS_PER_AREA:
            errors.append(f"subnets/{i}: index {sn['index']} out of range (an area holds {SUBNETS_PER_AREA} /24s)")
        for n in sn.get("routers", []) + sn.get("hosts", []):
            if n in nodes:
                errors.append(f"subnets/{i}: node {n!r} declared twice")
            nodes[n] = "router" if n in sn.get("routers", []) else "host"
    for i, ln in enumerate(raw.get("links", [])):
        for end in (ln["a"], ln["b"]):
            if end not in nodes:
                errors.append(f"links/{i}: unknown node {end!r}")
    apps: dict[str, dict] = {}
    for i, a in enumerate(raw.get("apps", [])):
        if a["name"] in apps:
            errors.append(f"apps/{i}: duplicate app name {a['name']!r}")
        apps[a["name"]] = a
        if nodes.get(a["node"]) != "host":
            errors.append(f"apps/{i}: node {a['node']!r} is not a declared host")
        if a.get("kind") == "command" and not a.get("command"):
            errors.append(f"apps/{i}: kind 'command' needs a command")
    bound = {a["node"] for a in raw.get("apps", [])}
    if len(bound) != len(raw.get("apps", [])):
        errors.append("apps: two apps share one node")
    for i, m in enumerate(spec.measurements):
        if not m.get("pairs"):
            errors.append(f"measurements/{i}: pairs required without a sweep")
        for client, server in m.get("pairs", []):
            for role, name in (("client", client), ("server", server)):
                if name not in apps:
                    errors.append(f"measurements/{i}: unknown app {name!r}")
                elif apps[name].get("kind", "server") not in (role, "command"):
                    errors.append(f"measurements/{i}: app {name!r} must be a {role}")
    buses = {b["id"] for b in (spec.grid or {}).get("buses", [])}
    for i, a in enumerate(raw.get("apps", [])):
        if a.get("grid_binding") and a["grid_binding"] not in buses:
            errors.append(f"apps/{i}: grid_binding {a['grid_binding']!r} is not a bus")
    if spec.grid:
        from gridloop.grid import GridError

        try:
            build_grid(spec.grid)
        except GridError as exc:
            errors.append(f"grid: {exc}")
    return errors


def build_grid(section: dict):
    from gridloop.grid import Bus, Grid, Line

    buses = [Bus(b["id"], b.get("base_load_kw", 0.0)) for b in section["buses"]]
    lines = [Line(ln["id"], ln["from"], ln["to"], ln["capacity_kw"]) for ln in section.get("lines", [])]
    return Grid(buses, lines)


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    with path.open() as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ScenarioError([f"{path}: not valid YAML: {exc}"]) from exc
    return parse_scenario(raw, path)


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package (``echo``, ``sweep``, ``grid``)."""
    return Path(str(resources.files("gridloop.scenarios").joinpath(f"{name}.yaml")))
