import base64

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridloop.kernel.protocol import ProtocolError
from gridloop.vif.codec import decode_packets_b64, encode_packets_b64


def test_examples():
    assert encode_packets_b64([b"", b"\x00\xff", b"abc"]) == ["", "AP8=", "YWJj"]
    assert decode_packets_b64(["YWJj"]) == [b"abc"]


@given(st.lists(st.binary(max_size=3000), max_size=8))
def test_roundtrip_and_size(packets):
    encoded = encode_packets_b64(packets)
    assert decode_packets_b64(encoded) == packets
    for p, s in zip(packets, encoded):
        assert len(s) == 4 * ((len(p) + 2) // 3)
        assert base64.b64decode(s) == p


@pytest.mark.parametrize("bad", [["@@@@"], [b"YWJj"], [5], ["YWJ"]])
def test_invalid(bad):
    with pytest.raises(ProtocolError):
        decode_packets_b64(bad)
