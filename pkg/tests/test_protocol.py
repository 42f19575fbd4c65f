import json
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridloop.kernel.protocol import (
    MAX_FRAME_SIZE,
    MsgKind,
    NeedMore,
    ProtocolError,
    StreamDecoder,
    WireMessage,
    decode_message,
    encode_message,
)

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-2**53, 2**53) | st.text(max_size=20)
    | st.floats(allow_nan=False, allow_infinity=False),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=8), inner, max_size=4),
    max_leaves=12,
)
messages = st.one_of(
    st.builds(WireMessage.request, st.integers(0, 2**31), st.text(min_size=1, max_size=10),
              st.lists(json_values, max_size=3), st.dictionaries(st.text(max_size=5), json_values, max_size=3)),
    st.builds(WireMessage.success, st.integers(0, 2**31), json_values),
    st.builds(WireMessage.error, st.integers(0, 2**31), st.text(max_size=30)),
)


def test_frame_layout():
    frame = encode_message(WireMessage.request(7, "step", [0, {}]))
    (length,) = struct.unpack("!I", frame[:4])
    assert length == len(frame) - 4
    assert json.loads(frame[4:]) == [0, 7, ["step", [0, {}], {}]]


@given(messages)
def test_roundtrip(msg):
    assert decode_message(encode_message(msg)) == msg


def test_truncated_frame_needs_more():
    frame = encode_message(WireMessage.success(1, {"a": 1}))
    assert decode_message(frame[:2]) == NeedMore(2)
    assert decode_message(frame[:-3]) == NeedMore(3)


def test_trailing_bytes_rejected():
    frame = encode_message(WireMessage.success(1, None))
    with pytest.raises(ProtocolError):
        decode_message(frame + b"x")


def test_oversized_frame_rejected():
    with pytest.raises(ProtocolError):
        decode_message(struct.pack("!I", MAX_FRAME_SIZE + 1) + b"{}")
    with pytest.raises(ProtocolError):
        encode_message(WireMessage.success(1, "x" * (MAX_FRAME_SIZE + 1)))


@pytest.mark.parametrize("body", [b"not json", b"[1,2]", b'[9,1,null]', b'[0,1,["m",{},{}]]', b'[2,1,5]', b'[1,-1,0]'])
def test_malformed_body(body):
    with pytest.raises(ProtocolError):
        decode_message(struct.pack("!I", len(body)) + body)


def test_unserializable_payload():
    with pytest.raises(ProtocolError):
        encode_message(WireMessage.success(1, object()))


@given(st.lists(messages, min_size=1, max_size=6), st.data())
def test_stream_split_anywhere(msgs, data):
    stream = b"".join(encode_message(m) for m in msgs)
    cuts = sorted(data.draw(st.lists(st.integers(0, len(stream)), max_size=8)))
    dec = StreamDecoder()
    out = []
    prev = 0
    for cut in cuts + [len(stream)]:
        out.extend(dec.feed(stream[prev:cut]))
        prev = cut
    assert out == msgs
    assert dec.pending == 0


def test_pipelined_frames_in_one_chunk():
    msgs = [WireMessage.request(i, "get_data", [{}]) for i in range(3)]
    out = StreamDecoder().feed(b"".join(encode_message(m) for m in msgs))
    assert [m.request_id for m in out] == [0, 1, 2]
    assert all(m.kind is MsgKind.REQUEST for m in out)
