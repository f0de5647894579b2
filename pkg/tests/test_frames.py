import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskbot.errors import DecodeError, InvalidTopic
from deskbot.frames import (
    FieldValue,
    UnifiedFrame,
    decode_json,
    encode_json,
    validate_topic,
)


def test_topic_validation():
    assert validate_topic("obs/cam_wrist") == "obs/cam_wrist"
    for bad in ("", "a b", "/x", "x/", "a//b"):
        with pytest.raises(InvalidTopic):
            validate_topic(bad)


def test_field_value_shape_checks():
    fv = FieldValue("f32", (2, 3), np.arange(6))
    assert fv.as_array().shape == (2, 3)
    with pytest.raises(ValueError):
        FieldValue("f32", (2, 3), np.arange(5))
    with pytest.raises(ValueError):
        FieldValue("f32", (0,), [])
    with pytest.raises(ValueError):
        FieldValue("f16", (1,), [0])


def test_canonical_key_order():
    frame = UnifiedFrame("t/x", "src", 0, 42, {"b": FieldValue.f32([1.0]),
                                               "a": FieldValue.f32([2.0])})
    raw = encode_json(frame).decode()
    obj = json.loads(raw)
    assert list(obj) == ["schema", "topic", "source_id", "seq", "t_ns", "fields"]
    assert list(obj["fields"]) == ["a", "b"]  # sorted field names
    assert raw.index('"a"') < raw.index('"b"')


def test_empty_fields_round_trips():
    frame = UnifiedFrame("t/x", "src", 3, 7, {})
    assert decode_json(encode_json(frame)) == frame


def test_length_shape_mismatch_rejected():
    frame = UnifiedFrame("t/x", "s", 0, 0, {"a": FieldValue.f32([1.0, 2.0])})
    obj = json.loads(encode_json(frame))
    obj["fields"]["a"]["shape"] = [3]
    with pytest.raises(DecodeError):
        decode_json(json.dumps(obj).encode())


def test_decode_error_carries_offset():
    bad = b'{"schema": "coin.unified.v1", "topic"'
    with pytest.raises(DecodeError) as ei:
        decode_json(bad)
    assert ei.value.offset > 0


def test_unknown_schema_rejected():
    frame = UnifiedFrame("t/x", "s", 0, 0, {})
    obj = json.loads(encode_json(frame))
    obj["schema"] = "coin.unified.v2"
    with pytest.raises(DecodeError):
        decode_json(json.dumps(obj).encode())


_topics = st.lists(
    st.text(alphabet="abcdefgh_0123456789", min_size=1, max_size=6),
    min_size=1, max_size=3,
).map("/".join)


@st.composite
def field_values(draw):
    dtype = draw(st.sampled_from(["f32", "i64", "u8"]))
    shape = tuple(draw(st.lists(st.integers(1, 4), min_size=1, max_size=3)))
    n = int(np.prod(shape))
    if dtype == "f32":
        data = draw(st.lists(
            st.floats(-1e6, 1e6, allow_nan=False, width=32), min_size=n, max_size=n))
    elif dtype == "i64":
        data = draw(st.lists(st.integers(-2**40, 2**40), min_size=n, max_size=n))
    else:
        data = draw(st.lists(st.integers(0, 255), min_size=n, max_size=n))
    return FieldValue(dtype, shape, data)


@st.composite
def frames(draw):
    fields = draw(st.dictionaries(
        st.text(alphabet="abcxyz_", min_size=1, max_size=8), field_values(),
        max_size=4))
    return UnifiedFrame(
        topic=draw(_topics),
        source_id=draw(st.text(max_size=12)),
        seq=draw(st.integers(0, 2**63 - 1)),
        t_ns=draw(st.integers(-2**62, 2**62)),
        fields=fields,
    )


@given(frames())
@settings(max_examples=200, deadline=None)
def test_codec_round_trip_is_identity(frame):
    assert decode_json(encode_json(frame)) == frame


@given(frames())
@settings(max_examples=100, deadline=None)
def test_encode_decode_encode_bytes_stable(frame):
    raw = encode_json(frame)
    assert encode_json(decode_json(raw)) == raw
