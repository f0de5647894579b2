"""Unified frame format ("coin.unified.v1") and its canonical JSON codec.

Every native sensor/command message is translated into a :class:`UnifiedFrame`
before anything downstream (recording, alignment, training) sees it. The JSON
encoding is canonical — fixed key order, sorted field names, shortest
round-trip float formatting — so encoded frames are stable byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DecodeError, InvalidTopic

SCHEMA_ID = "coin.unified.v1"

_DTYPES = {
    "f32": np.float32,
    "i64": np.int64,
    "u8": np.uint8,
}
_DTYPE_NAMES = {np.dtype(v): k for k, v in _DTYPES.items()}


def validate_topic(name: str) -> str:
    """Check a topic path: non-empty "/"-separated segments, no whitespace."""
    if not isinstance(name, str) or not name:
        raise InvalidTopic(f"empty topic: {name!r}")
    if any(ch.isspace() for ch in name):
        raise InvalidTopic(f"topic contains whitespace: {name!r}")
    if any(not seg for seg in name.split("/")):
        raise InvalidTopic(f"topic has empty segment: {name!r}")
    return name


class FieldValue:
    """One named tensor inside a unified frame: dtype + shape + flat data."""

    __slots__ = ("dtype", "shape", "data")

    def __init__(self, dtype: str, shape, data):
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {dtype!r}")
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ValueError(f"shape entries must be >= 1, got {shape}")
        arr = np.asarray(data, dtype=_DTYPES[dtype]).reshape(-1)
        n = int(np.prod(shape)) if shape else 1
        if arr.size != n:
            raise ValueError(f"data length {arr.size} != product(shape) {n}")
        self.dtype = dtype
        self.shape = shape
        self.data = arr

    @classmethod
    def f32(cls, values, shape=None) -> "FieldValue":
        arr = np.asarray(values, dtype=np.float32)
        return cls("f32", shape if shape is not None else arr.shape, arr)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "FieldValue":
        name = _DTYPE_NAMES.get(arr.dtype)
        if name is None:
            raise ValueError(f"no unified dtype for {arr.dtype}")
        return cls(name, arr.shape, arr)

    def as_array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def __eq__(self, other):
        return (
            isinstance(other, FieldValue)
            and self.dtype == other.dtype
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"FieldValue({self.dtype}, shape={self.shape})"


@dataclass
class UnifiedFrame:
    """One timestamped sample in the unified format."""

    topic: str
    source_id: str
    seq: int
    t_ns: int
    fields: dict[str, FieldValue] = field(default_factory=dict)
    schema: str = SCHEMA_ID

    def __post_init__(self):
        validate_topic(self.topic)

    def __eq__(self, other):
        return (
            isinstance(other, UnifiedFrame)
            and self.schema == other.schema
            and self.topic == other.topic
            and self.source_id == other.source_id
            and self.seq == other.seq
            and self.t_ns == other.t_ns
            and self.fields == other.fields
        )


def _scalar(v, dtype: str):
    # json emits shortest round-trip decimals for floats; f32 values are
    # exact in float64 so encode(decode(x)) is the identity bit-for-bit.
    if dtype == "f32":
        return float(v)
    return int(v)


def fields_to_json(fields: dict[str, FieldValue]) -> dict:
    out = {}
    for name in sorted(fields):
        fv = fields[name]
        out[name] = {
            "dtype": fv.dtype,
            "shape": list(fv.shape),
            "data": [_scalar(v, fv.dtype) for v in fv.data.tolist()],
        }
    return out


def fields_from_json(obj, where: str = "fields") -> dict[str, FieldValue]:
    if not isinstance(obj, dict):
        raise DecodeError(f"{where} must be an object")
    out = {}
    for name, spec in obj.items():
        if not isinstance(spec, dict):
            raise DecodeError(f"field {name!r} must be an object")
        try:
            out[name] = FieldValue(spec["dtype"], spec["shape"], spec["data"])
        except KeyError as e:
            raise DecodeError(f"field {name!r} missing key {e.args[0]!r}") from e
        except (ValueError, TypeError) as e:
            raise DecodeError(f"field {name!r}: {e}") from e
    return out


def encode_json(frame: UnifiedFrame) -> bytes:
    """Serialize a frame canonically: fixed key order, sorted field names."""
    obj = {
        "schema": frame.schema,
        "topic": frame.topic,
        "source_id": frame.source_id,
        "seq": int(frame.seq),
        "t_ns": int(frame.t_ns),
        "fields": fields_to_json(frame.fields),
    }
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def decode_json(raw: bytes) -> UnifiedFrame:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DecodeError(f"invalid utf-8: {e.reason}", offset=e.start) from e
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise DecodeError(f"invalid json: {e.msg}", offset=e.pos) from e
    if not isinstance(obj, dict):
        raise DecodeError("frame must be a json object")
    if obj.get("schema") != SCHEMA_ID:
        raise DecodeError(f"unknown schema {obj.get('schema')!r}")
    for key in ("topic", "source_id", "seq", "t_ns", "fields"):
        if key not in obj:
            raise DecodeError(f"missing key {key!r}")
    try:
        return UnifiedFrame(
            topic=obj["topic"],
            source_id=obj["source_id"],
            seq=int(obj["seq"]),
            t_ns=int(obj["t_ns"]),
            fields=fields_from_json(obj["fields"]),
        )
    except InvalidTopic as e:
        raise DecodeError(str(e)) from e
    except (TypeError, ValueError) as e:
        raise DecodeError(str(e)) from e
