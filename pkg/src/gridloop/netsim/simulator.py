"""Kernel adapter for the network model (the ``ict-sim``).

Each app-gateway node is exposed as a ``NetworkNode`` entity with an ``rx``
input (packets the application sent, to be injected) and a ``tx`` output
(packets delivered to that node). Packets travel as Base64 strings.
"""

from __future__ import annotations

from gridloop.kernel.api import Simulator
from gridloop.netsim.topology import Topology
from gridloop.vif.codec import decode_packets_b64, encode_packets_b64

META = {
    "models": {
        "NetworkNode": {"public": True, "params": ["node", "app"], "inputs": ["rx"], "outputs": ["tx"]},
    }
}


class NetworkSimulator(Simulator):
    meta = META

    def __init__(self, topology: Topology, prefix: str = "SimulatedNetwork") -> None:
        self.topology = topology
        self.prefix = prefix
        self.entities: dict[str, str] = {}
        self._pending: dict[str, list[bytes]] = {}

    def create(self, num: int, model: str, node: str, app: str | None = None, **params) -> list[dict]:
        if num != 1:
            raise ValueError("create one NetworkNode per gateway")
        if node not in self.topology.nodes:
            raise ValueError(f"unknown node {node!r}")
        if self.topology.nodes[node].role != "app-gateway":
            raise ValueError(f"node {node!r} is not an app-gateway")
        eid = f"{self.prefix}/{app or node}/{node}"
        self.entities[eid] = node
        return [{"eid": eid, "type": model}]

    def entity_for(self, node: str) -> str:
        for eid, n in self.entities.items():
            if n == node:
                return eid
        raise KeyError(node)

    def step(self, time: int, inputs: dict) -> None:
        for eid, attrs in inputs.items():
            node = self.entities[eid]
            for value in attrs.get("rx", {}).values():
                if not value:
                    continue
                for data in decode_packets_b64(value):
                    self.topology.inject(node, data, time)
        delivered = self.topology.step(time + 1)
        for node, packets in delivered.items():
            self._pending.setdefault(node, []).extend(p.data for p in packets)

    def get_data(self, outputs: dict) -> dict:
        data = {}
        for eid, attrs in outputs.items():
            node = self.entities[eid]
            packets = self._pending.pop(node, [])
            data[eid] = {attr: encode_packets_b64(packets) for attr in attrs if attr == "tx"}
        return data
