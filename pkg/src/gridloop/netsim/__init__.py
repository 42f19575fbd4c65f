from gridloop.netsim.delay import BROKEN, Dedicated, HighImpairment, Shared, default_model, model_for, sample_delay
from gridloop.netsim.topology import (
    AreaConfig,
    Hop,
    Link,
    LinkSpec,
    NetworkSpec,
    Node,
    NodeSpec,
    NoRoute,
    Packet,
    PacketRecord,
    Topology,
    TopologyError,
    build_topology,
)

__all__ = [
    "AreaConfig",
    "BROKEN",
    "Dedicated",
    "HighImpairment",
    "Hop",
    "Link",
    "LinkSpec",
    "NetworkSpec",
    "NoRoute",
    "Node",
    "NodeSpec",
    "Packet",
    "PacketRecord",
    "Shared",
    "Topology",
    "TopologyError",
    "build_topology",
    "default_model",
    "model_for",
    "sample_delay",
]
