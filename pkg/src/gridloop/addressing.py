"""The ICT model's IPv4 subnet plan.

The whole model lives in 10.64.0.0/10, split into four /12 area blocks.
Every subnet is a /24; routers take the lowest host numbers before any
ordinary host is added.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field

Cidr = ipaddress.IPv4Network


class AreaKind(enum.Enum):
    DEDICATED = "dedicated"
    SHARED_LINKS = "shared"
    HIGH_IMPAIRMENT = "high_impairment"

    @classmethod
    def parse(cls, value: str | AreaKind) -> AreaKind:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"shared_links": "shared", "highimpairment": "high_impairment", "high": "high_impairment"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown area {value!r}") from None


ROOT = Cidr("10.64.0.0/10")
UNALLOCATED = "unallocated"
SUBNET_PREFIX = 24
SUBNETS_PER_AREA = 2 ** (SUBNET_PREFIX - 12)
HOSTS_PER_SUBNET = 254


class AddressError(ValueError):
    pass


class SubnetFull(AddressError):
    pass


class OrderingError(AddressError):
    pass


@dataclass(frozen=True)
class SubnetPlan:
    root: Cidr = ROOT
    areas: dict = field(
        default_factory=lambda: {
            AreaKind.DEDICATED: Cidr("10.64.0.0/12"),
            AreaKind.SHARED_LINKS: Cidr("10.80.0.0/12"),
            AreaKind.HIGH_IMPAIRMENT: Cidr("10.96.0.0/12"),
            UNALLOCATED: Cidr("10.112.0.0/12"),
        }
    )

    def area_of(self, ip: str | ipaddress.IPv4Address) -> AreaKind | str | None:
        addr = ipaddress.IPv4Address(ip)
        for area, block in self.areas.items():
            if addr in block:
                return area
        return None


PLAN = SubnetPlan()


def area_block(plan: SubnetPlan, area: AreaKind | str) -> Cidr:
    key = area if area == UNALLOCATED else AreaKind.parse(area)
    return plan.areas[key]


def allocate_subnet(plan: SubnetPlan, area: AreaKind | str, index: int) -> Cidr:
    """The ``index``-th /24 inside the area's /12."""
    if not 0 <= index < SUBNETS_PER_AREA:
        raise AddressError(f"subnet index {index} outside 0..{SUBNETS_PER_AREA - 1}")
    block = area_block(plan, area)
    base = int(block.network_address) + (index << (32 - SUBNET_PREFIX))
    return Cidr((base, SUBNET_PREFIX))


@dataclass
class _SubnetState:
    routers: int = 0
    hosts: int = 0


class AddressRegistry:
    """Hands out host addresses, routers first, per /24."""

    def __init__(self, plan: SubnetPlan = PLAN) -> None:
        self.plan = plan
        self._subnets: dict[Cidr, _SubnetState] = {}
        self.assigned: dict[ipaddress.IPv4Address, Cidr] = {}

    def allocate_host(self, subnet: Cidr, role: str) -> ipaddress.IPv4Address:
        subnet = Cidr(subnet)
        if subnet.prefixlen != SUBNET_PREFIX:
            raise AddressError(f"{subnet} is not a /24")
        if not subnet.subnet_of(self.plan.root):
            raise AddressError(f"{subnet} outside {self.plan.root}")
        state = self._subnets.setdefault(subnet, _SubnetState())
        used = state.routers + state.hosts
        if used >= HOSTS_PER_SUBNET:
            raise SubnetFull(f"{subnet} has no free addresses")
        if role == "router":
            if state.hosts:
                raise OrderingError(f"router requested in {subnet} after its first host")
            state.routers += 1
        elif role in ("host", "app-gateway"):
            state.hosts += 1
        else:
            raise AddressError(f"unknown role {role!r}")
        ip = subnet.network_address + used + 1
        self.assigned[ip] = subnet
        return ip


def allocate_host(subnet: Cidr, role: str, registry: AddressRegistry) -> ipaddress.IPv4Address:
    return registry.allocate_host(subnet, role)
