"""Hypothesis strategies for raw IP packets."""

from hypothesis import strategies as st

from gridloop import ip as iplib

v4 = st.builds(lambda a, b: f"10.64.{a}.{b}", st.integers(0, 255), st.integers(1, 254))
v6 = st.builds(lambda a, b: f"fd00::{a:x}:{b:x}", st.integers(0, 0xFFFF), st.integers(1, 0xFFFF))


def ipv4_packets(max_payload=1500):
    return st.builds(lambda s, d, p, b: iplib.ipv4_packet(s, d, p, b), v4, v4, st.integers(0, 255),
                     st.binary(max_size=max_payload))


def ipv6_packets(max_payload=1500):
    return st.builds(lambda s, d, p, b: iplib.ipv6_packet(s, d, p, b), v6, v6, st.integers(0, 255),
                     st.binary(max_size=max_payload))


def any_packets(max_payload=1500):
    return st.one_of(ipv4_packets(max_payload), ipv6_packets(max_payload))


def split(stream: bytes, cuts) -> list[bytes]:
    cuts = sorted({c for c in cuts if 0 < c < len(stream)})
    bounds = [0] + cuts + [len(stream)]
    return [stream[a:b] for a, b in zip(bounds, bounds[1:])]
