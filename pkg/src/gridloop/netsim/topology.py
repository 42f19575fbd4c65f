"""Discrete-event model of one autonomous system with three QoS areas.

Packets are real IP packets. Each hop over a link costs queueing wait,
serialization (size * 8 / data rate) and a delay sampled from the link's
area law. Links are FIFO per direction: a packet never overtakes the one
sent before it, so a fast sample behind a slow one is held back.
"""

from __future__ import annotations

import heapq
import ipaddress
import logging
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from gridloop import ip as iplib
from gridloop.addressing import PLAN, AddressError, AddressRegistry, AreaKind, Cidr, allocate_subnet
from gridloop.netsim.delay import DEFAULT_RATES, RATE_LIMITS, DelayModel, default_model, sample_delay

log = logging.getLogger(__name__)

NodeId = str
ROLES = ("router", "host", "app-gateway")
_SEVERITY = {AreaKind.DEDICATED: 0, AreaKind.SHARED_LINKS: 1, AreaKind.HIGH_IMPAIRMENT: 2}
DEFAULT_QUEUE_CAPACITY = 1000


class TopologyError(ValueError):
    pass


class NoRoute(LookupError):
    pass


# -- declarative input -------------------------------------------------------


@dataclass
class AreaConfig:
    model: DelayModel
    data_rate: float | None = None
    delay_enabled: bool = True
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY


@dataclass
class NodeSpec:
    id: NodeId
    role: str
    area: AreaKind
    subnet_index: int
    ip: str | None = None


@dataclass
class LinkSpec:
    a: NodeId
    b: NodeId
    data_rate: float | None = None
    area: AreaKind | None = None
    queue_capacity: int | None = None


@dataclass
class NetworkSpec:
    nodes: list[NodeSpec]
    links: list[LinkSpec]
    seed: int
    areas: dict[AreaKind, AreaConfig] = field(default_factory=dict)

    def area_config(self, area: AreaKind) -> AreaConfig:
        return self.areas.get(area) or AreaConfig(default_model(area))


# -- runtime structures ------------------------------------------------------


@dataclass
class Node:
    id: NodeId
    role: str
    ip: str
    subnet: Cidr
    area: AreaKind


@dataclass
class Packet:
    data: bytes
    src_ip: str
    dst_ip: str
    size: int
    ingress_time: float
    id: int = -1


@dataclass
class Hop:
    src: NodeId
    dst: NodeId
    area: AreaKind
    queue_wait: float
    serialization: float
    delay: float
    hold: float = 0.0


@dataclass
class PacketRecord:
    id: int
    ingress_node: NodeId
    ingress_time: float
    size: int
    src_ip: str | None
    dst_ip: str | None
    data: bytes
    status: str = "in_flight"
    hops: list[Hop] = field(default_factory=list)
    transit: float = 0.0
    delivery_time: float | None = None
    dest_node: NodeId | None = None


@dataclass
class _Channel:
    link: Link
    src: NodeId
    dst: NodeId
    busy_until: float = 0.0
    last_arrival: float = 0.0
    in_queue: deque = field(default_factory=deque)


@dataclass
class Link:
    a: NodeId
    b: NodeId
    data_rate: float
    area: AreaKind
    model: DelayModel
    delay_enabled: bool
    queue_capacity: int

    def __post_init__(self):
        self.channels = {
            (self.a, self.b): _Channel(self, self.a, self.b),
            (self.b, self.a): _Channel(self, self.b, self.a),
        }

    def serialization_ms(self, size: int) -> float:
        return size * 8 / self.data_rate * 1000.0


AREA_COUNTERS = ("delivered", "lost", "dropped_queue", "unroutable", "malformed")


class Topology:
    def __init__(self, nodes: dict[NodeId, Node], links: list[Link], seed: int) -> None:
        self.nodes = nodes
        self.links = links
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.by_ip = {n.ip: n.id for n in nodes.values()}
        self.adjacency: dict[NodeId, dict[NodeId, Link]] = {nid: {} for nid in nodes}
        for link in links:
            self.adjacency[link.a][link.b] = link
            self.adjacency[link.b][link.a] = link
        self.next_hop = self._routing_tables()
        self.now = 0.0
        self._events: list = []
        self._seq = 0
        self.records: list[PacketRecord] = []
        self.outbox: dict[NodeId, list[Packet]] = {}
        self.counters = Counter()
        self.area_counters = {area: Counter() for area in AreaKind}

    # -- routing --

    def _ip_key(self, nid: NodeId) -> int:
        return int(ipaddress.IPv4Address(self.nodes[nid].ip))

    def _routing_tables(self) -> dict[NodeId, dict[NodeId, NodeId]]:
        table: dict[NodeId, dict[NodeId, NodeId]] = {nid: {} for nid in self.nodes}
        for dst in self.nodes:
            dist = {dst: 0}
            frontier = deque([dst])
            while frontier:
                u = frontier.popleft()
                for v in self.adjacency[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        frontier.append(v)
            if len(dist) != len(self.nodes):
                missing = sorted(set(self.nodes) - set(dist))
                raise TopologyError(f"topology is disconnected: {missing} cannot reach {dst}")
            for u in self.nodes:
                if u == dst:
                    continue
                candidates = [v for v in self.adjacency[u] if dist[v] == dist[u] - 1]
                table[u][dst] = min(candidates, key=self._ip_key)
        return table

    def path(self, src: NodeId, dst: NodeId) -> list[NodeId]:
        hops = [src]
        while hops[-1] != dst:
            hops.append(self.next_hop[hops[-1]][dst])
        return hops

    def route(self, src_ip: str, dst_ip: str) -> list[NodeId]:
        try:
            src, dst = self.by_ip[str(src_ip)], self.by_ip[str(dst_ip)]
        except KeyError as exc:
            raise NoRoute(f"no route from {src_ip} to {dst_ip}: unknown address {exc}") from None
        return self.path(src, dst)

    def gateways(self) -> list[NodeId]:
        return [nid for nid, n in self.nodes.items() if n.role == "app-gateway"]

    # -- packet flow --

    def _push(self, time: float, record: PacketRecord, node: NodeId) -> None:
        self._seq += 1
        heapq.heappush(self._events, (time, self._seq, record, node))

    def inject(self, node: NodeId, data: bytes, now: float | None = None) -> PacketRecord:
        if node not in self.nodes:
            raise KeyError(f"unknown node {node!r}")
        now = self.now if now is None else now
        if now < self.now:
            raise ValueError(f"cannot inject at {now} before current time {self.now}")
        data = bytes(data)
        record = PacketRecord(len(self.records), node, now, len(data), None, None, data)
        self.records.append(record)
        self.counters["injected"] += 1
        area = self.nodes[node].area
        try:
            hdr = iplib.parse_header(data)
        except iplib.MalformedPacket as exc:
            log.debug("dropping malformed packet at %s: %s", node, exc)
            self._finish(record, "malformed", area)
            return record
        record.src_ip, record.dst_ip = hdr.src, hdr.dst
        dest = self.by_ip.get(hdr.dst)
        if dest is None:
            self._finish(record, "unroutable", area)
            return record
        record.dest_node = dest
        self._push(now, record, node)
        return record

    def _finish(self, record: PacketRecord, status: str, area: AreaKind) -> None:
        record.status = status
        self.counters[status] += 1
        self.area_counters[area][status] += 1

    def _arrive(self, time: float, record: PacketRecord, node: NodeId) -> None:
        if node == record.dest_node:
            record.delivery_time = time
            self._finish(record, "delivered", self.nodes[node].area)
            if self.nodes[node].role == "app-gateway":
                pkt = Packet(record.data, record.src_ip, record.dst_ip, record.size, record.ingress_time, record.id)
                self.outbox.setdefault(node, []).append(pkt)
            return
        nxt = self.next_hop[node][record.dest_node]
        link = self.adjacency[node][nxt]
        ch = link.channels[(node, nxt)]
        while ch.in_queue and ch.in_queue[0] <= time:
            ch.in_queue.popleft()
        if len(ch.in_queue) >= link.queue_capacity:
            self._finish(record, "dropped_queue", link.area)
            return
        start = max(time, ch.busy_until)
        ser = link.serialization_ms(record.size)
        finish = start + ser
        ch.busy_until = finish
        ch.in_queue.append(finish)
        delay = sample_delay(link.model, self.rng) if link.delay_enabled else 0.0
        wait = start - time
        if delay == float("inf"):
            record.hops.append(Hop(node, nxt, link.area, wait, ser, delay))
            self._finish(record, "lost", link.area)
            return
        arrival = finish + delay
        hold = 0.0
        if arrival < ch.last_arrival:
            hold = ch.last_arrival - arrival
            arrival = ch.last_arrival
        ch.last_arrival = arrival
        record.hops.append(Hop(node, nxt, link.area, wait, ser, delay, hold))
        record.transit += wait + ser + delay + hold
        self._push(arrival, record, nxt)

    def step(self, until: float) -> dict[NodeId, list[Packet]]:
        """Process every event before ``until``; return packets delivered to gateways."""
        if until < self.now:
            raise ValueError(f"until={until} is before current time {self.now}")
        while self._events and self._events[0][0] < until:
            time, _, record, node = heapq.heappop(self._events)
            self._arrive(time, record, node)
        self.now = until
        out, self.outbox = self.outbox, {}
        return out

    @property
    def in_flight(self) -> int:
        return len(self._events)

    def conservation_holds(self) -> bool:
        c = self.counters
        accounted = sum(c[k] for k in AREA_COUNTERS) + self.in_flight
        return c["injected"] == accounted

    def area_summary(self) -> dict[str, dict[str, int]]:
        return {
            area.value: {k: self.area_counters[area][k] for k in AREA_COUNTERS}
            for area in AreaKind
        }


def _worst(a: AreaKind, b: AreaKind) -> AreaKind:
    return a if _SEVERITY[a] >= _SEVERITY[b] else b


def build_topology(spec: NetworkSpec) -> Topology:
    registry = AddressRegistry(PLAN)
    nodes: dict[NodeId, Node] = {}
    for ns in spec.nodes:
        if ns.id in nodes:
            raise TopologyError(f"duplicate node id {ns.id!r}")
        if ns.role not in ROLES:
            raise TopologyError(f"node {ns.id!r}: unknown role {ns.role!r}")
        area = AreaKind.parse(ns.area)
        try:
            subnet = allocate_subnet(PLAN, area, ns.subnet_index)
            role = "router" if ns.role == "router" else "host"
            allocated = registry.allocate_host(subnet, role)
        except AddressError as exc:
            raise TopologyError(f"node {ns.id!r}: {exc}") from exc
        ip = allocated
        if ns.ip is not None:
            ip = ipaddress.IPv4Address(ns.ip)
            if ip not in subnet or ip in (subnet.network_address, subnet.broadcast_address):
                raise TopologyError(f"node {ns.id!r}: address {ip} outside its subnet {subnet} in area {area.value}")
        nodes[ns.id] = Node(ns.id, ns.role, str(ip), subnet, area)
    _check_router_first(nodes)
    ips = Counter(n.ip for n in nodes.values())
    dupes = [ip for ip, k in ips.items() if k > 1]
    if dupes:
        raise TopologyError(f"duplicate addresses {dupes}")

    links = []
    seen = set()
    for ls in spec.links:
        for end in (ls.a, ls.b):
            if end not in nodes:
                raise TopologyError(f"link {ls.a}-{ls.b}: unknown node {end!r}")
        key = frozenset((ls.a, ls.b))
        if ls.a == ls.b or key in seen:
            raise TopologyError(f"duplicate or self link {ls.a}-{ls.b}")
        seen.add(key)
        area = AreaKind.parse(ls.area) if ls.area else _worst(nodes[ls.a].area, nodes[ls.b].area)
        cfg = spec.area_config(area)
        rate = ls.data_rate or cfg.data_rate or DEFAULT_RATES[area]
        lo, hi = RATE_LIMITS[area]
        if not lo <= rate <= hi:
            raise TopologyError(f"link {ls.a}-{ls.b}: data rate {rate} bit/s outside {area.value} range [{lo}, {hi}]")
        capacity = ls.queue_capacity or cfg.queue_capacity
        links.append(Link(ls.a, ls.b, float(rate), area, cfg.model, cfg.delay_enabled, capacity))
    return Topology(nodes, links, spec.seed)


def _check_router_first(nodes: dict[NodeId, Node]) -> None:
    by_subnet: dict[Cidr, list[Node]] = {}
    for n in nodes.values():
        by_subnet.setdefault(n.subnet, []).append(n)
    for subnet, members in by_subnet.items():
        routers = [int(ipaddress.IPv4Address(n.ip)) for n in members if n.role == "router"]
        hosts = [int(ipaddress.IPv4Address(n.ip)) for n in members if n.role != "router"]
        if routers and hosts and max(routers) > min(hosts):
            raise TopologyError(f"{subnet}: routers must hold the lowest addresses")
