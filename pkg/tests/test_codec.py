from hypothesis import given, settings
import hypothesis.strategies as st
import pytest

from codec import (EOS_FRAME, MAX_FRAME, U32, FrameReader, decode, encode, frame, unframe)
from errors import DecodeError
from prelude import ClusterId

cluster_ids = st.builds(ClusterId, st.integers(min_value=0, max_value=2**32 - 1))

scalars = st.one_of(
    st.integers(),
    st.text(),
    st.floats(allow_nan=False),
    st.booleans(),
    st.none(),
    st.binary(),
    cluster_ids,
)

values = st.recursive(scalars, lambda children: st.one_of(
    st.tuples(children, children),
    st.lists(children, max_size=5).map(tuple),
    st.lists(children, max_size=5),
    st.dictionaries(st.text(max_size=8), children, max_size=4),
), max_leaves=20)

def roundtrip(value):
    frames = unframe(frame(encode(value)))
    assert len(frames) == 1
    return decode(frames[0])

@settings(max_examples=1000)
@given(st.integers(min_value=-2**63, max_value=2**63 - 1))
def test_roundtrip_i64(value):
    "Encode, frame, unframe and decode gives the value back"
    assert roundtrip(value) == value

@settings(max_examples=1000)
@given(st.integers())
def test_roundtrip_bigint(value):
    assert roundtrip(value) == value

@settings(max_examples=1000)
@given(st.text())
def test_roundtrip_str(value):
    assert roundtrip(value) == value

@settings(max_examples=1000)
@given(st.tuples(cluster_ids, st.text()))
def test_roundtrip_addressed(value):
    assert roundtrip(value) == value

@settings(max_examples=1000)
@given(st.tuples(st.integers(), st.tuples(st.text(), st.integers())))
def test_roundtrip_nested(value):
    assert roundtrip(value) == value

@given(values)
def test_roundtrip_mixed(value):
    back = roundtrip(value)
    assert back == value
    assert type(back) is type(value)

def test_known_bytes():
    assert encode(1) == b"i" + (1).to_bytes(8, "little")
    assert encode("ab") == b"s\x02\x00\x00\x00ab"
    assert encode((ClusterId(2), None)) == b"t\x02\x00\x00\x00c\x02\x00\x00\x00N"
    assert encode(True) == b"T"
    assert frame(b"x") == b"\x01\x00\x00\x00x"
    assert EOS_FRAME == b"\x00\x00\x00\x00"

def test_big_ints_use_their_own_tag():
    assert encode(2**63)[:1] == b"I"
    assert decode(encode(-2**100)) == -2**100

def test_unencodable_value():
    with pytest.raises(TypeError):
        encode(object())
    with pytest.raises(TypeError):
        encode({1, 2})

def test_empty_payload_is_reserved():
    with pytest.raises(ValueError):
        frame(b"")

@pytest.mark.parametrize("data", [
    b"",
    b"i\x01\x00",
    b"s\x05\x00\x00\x00ab",
    b"t\x02\x00\x00\x00i\x01\x00\x00\x00\x00\x00\x00\x00",
    b"s\x02\x00\x00\x00\xff\xfe",
    b"Q",
    b"NN",
], ids=["empty", "short-int", "short-str", "short-tuple", "bad-utf8", "unknown-tag", "trailing"])
def test_decode_errors(data):
    with pytest.raises(DecodeError):
        decode(data)

def test_frame_reader_handles_any_chunking():
    payloads = [encode(i) for i in range(20)] + [encode("x" * 300)]
    wire = b"".join(frame(p) for p in payloads) + EOS_FRAME
    for chunk in (1, 3, 7, 64, len(wire)):
        reader = FrameReader()
        out = []
        for at in range(0, len(wire), chunk):
            out += reader.feed(wire[at:at + chunk])
        assert out == payloads + [b""]
        assert reader.pending() == 0

def test_frame_reader_keeps_partial_frames():
    reader = FrameReader()
    data = frame(encode(5))
    assert reader.feed(data[:6]) == []
    assert reader.pending() == 6
    assert reader.feed(data[6:]) == [encode(5)]

def test_oversize_frame_rejected():
    with pytest.raises(DecodeError):
        FrameReader().feed(U32.pack(MAX_FRAME + 1))

def test_unframe_rejects_leftovers():
    with pytest.raises(DecodeError):
        unframe(frame(b"abc")[:-1])
