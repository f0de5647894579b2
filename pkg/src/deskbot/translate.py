"""Adapters that convert native message payloads into unified frames.

Native payloads are JSON bytes carrying a "schema" key; an adapter registered
for that schema id maps the payload to unified fields and the runner
republishes the result on the adapter's output topic. Adapters are pure
functions of the payload, so translation is stateless and replayable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bus import Bus, RawMessage, Subscription
from .errors import DuplicateSchema, MalformedPayload, NoAdapter
from .frames import FieldValue, UnifiedFrame, validate_topic

# An adapter returns the unified fields plus an optional authoritative
# timestamp taken from the native payload (ns). When it returns None the
# bus-level t_ns passes through untouched.
AdapterFn = Callable[[bytes], tuple[dict[str, FieldValue], int | None]]

SIM_EEF_SCHEMA = "sim.eef_state.v1"
SIM_SCENE_SCHEMA = "sim.scene.v1"
SIM_CMD_SCHEMA = "sim.leader_cmd.v1"


@dataclass(frozen=True)
class AdapterSpec:
    native_schema_id: str
    output_topic: str

    def __post_init__(self):
        validate_topic(self.output_topic)


class AdapterRegistry:
    def __init__(self):
        self._adapters: dict[str, tuple[AdapterSpec, AdapterFn]] = {}

    def register(self, spec: AdapterSpec, fn: AdapterFn) -> str:
        if spec.native_schema_id in self._adapters:
            raise DuplicateSchema(f"adapter for {spec.native_schema_id!r} already registered")
        self._adapters[spec.native_schema_id] = (spec, fn)
        return spec.native_schema_id

    def get(self, schema_id: str) -> tuple[AdapterSpec, AdapterFn]:
        try:
            return self._adapters[schema_id]
        except KeyError:
            raise NoAdapter(f"no adapter registered for schema {schema_id!r}") from None

    def known(self, schema_id: str) -> bool:
        return schema_id in self._adapters


def sniff_schema(payload: bytes) -> str | None:
    """Best-effort schema id from a native payload; None when unparseable."""
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    if isinstance(obj, dict) and isinstance(obj.get("schema"), str):
        return obj["schema"]
    return None


def translate(msg: RawMessage, registry: AdapterRegistry) -> UnifiedFrame:
    """Translate one raw message. Preserves (source_id, seq) always and t_ns
    unless the native payload carries its own authoritative stamp."""
    schema_id = sniff_schema(msg.payload)
    if schema_id is None:
        raise MalformedPayload(f"payload on {msg.topic!r} has no parseable schema id")
    spec, fn = registry.get(schema_id)
    try:
        fields, t_override = fn(msg.payload)
    except MalformedPayload:
        raise
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as e:
        raise MalformedPayload(f"adapter {schema_id!r}: {e}") from e
    return UnifiedFrame(
        topic=spec.output_topic,
        source_id=msg.source_id,
        seq=msg.seq,
        t_ns=msg.t_ns if t_override is None else int(t_override),
        fields=fields,
    )


class TranslationRunner:
    """Consumes raw-topic subscriptions and republishes unified frames.

    Unified frames travel on the bus as their canonical JSON bytes so the
    recorder downstream sees exactly what would cross a wire.
    """

    def __init__(self, bus: Bus, registry: AdapterRegistry, pattern: str = "raw/*",
                 maxlen: int = 65536):
        self._bus = bus
        self._registry = registry
        self._sub: Subscription = bus.subscribe(pattern, maxlen=maxlen)
        self.untranslated = 0

    def register_adapter(self, spec: AdapterSpec, fn: AdapterFn) -> str:
        return self._registry.register(spec, fn)

    def pump(self) -> int:
        """Translate everything queued; returns the number republished."""
        from .frames import encode_json

        n = 0
        for msg in self._sub.pop_all():
            schema_id = sniff_schema(msg.payload)
            if schema_id is None or not self._registry.known(schema_id):
                self.untranslated += 1
                continue
            frame = translate(msg, self._registry)
            # inject, not publish: the unified frame keeps the native
            # message's (source, seq, t_ns) identity, so it must not claim a
            # fresh seq or advance the source's timestamp watermark
            self._bus.inject(RawMessage(frame.topic, frame.source_id, frame.seq,
                                        frame.t_ns, encode_json(frame)))
            n += 1
        return n

    def close(self):
        self._sub.close()


# --- stock adapters ---

def _parse_json(payload: bytes, schema_id: str) -> dict:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedPayload(f"{schema_id}: payload is not valid JSON") from e
    if not isinstance(obj, dict) or obj.get("schema") != schema_id:
        raise MalformedPayload(f"{schema_id}: wrong or missing schema key")
    return obj


def joint_state_adapter(payload: bytes) -> tuple[dict[str, FieldValue], int | None]:
    """Generic joint-state schema: {"schema", "q": [...], "stamp_s": float}.

    The native stamp is seconds; the unified timestamp is nanoseconds.
    """
    obj = _parse_json(payload, "joint_state.v1")
    q = obj["q"]
    if not isinstance(q, list) or not q:
        raise MalformedPayload("joint_state.v1: q must be a non-empty list")
    t_ns = round(float(obj["stamp_s"]) * 1e9)
    return {"joint_pos": FieldValue.f32(q, shape=(len(q),))}, t_ns


def gripper_adapter(payload: bytes) -> tuple[dict[str, FieldValue], int | None]:
    """{"schema", "open": bool} -> f32 {0.0, 1.0} (booleans become floats)."""
    obj = _parse_json(payload, "gripper_state.v1")
    return {"gripper": FieldValue.f32([1.0 if obj["open"] else 0.0], shape=(1,))}, None


def _sim_fields(obj: dict, names: list[str]) -> dict[str, FieldValue]:
    out = {}
    for name in names:
        vals = obj[name]
        arr = np.asarray(vals, dtype=np.float32)
        out[name] = FieldValue("f32", arr.shape, arr)
    return out


def sim_eef_state_adapter(payload: bytes) -> tuple[dict[str, FieldValue], int | None]:
    obj = _parse_json(payload, SIM_EEF_SCHEMA)
    return _sim_fields(obj, ["eef_pose"]), int(obj["stamp_ns"])


def sim_scene_adapter(payload: bytes) -> tuple[dict[str, FieldValue], int | None]:
    obj = _parse_json(payload, SIM_SCENE_SCHEMA)
    names = ["scene"] + (["grid"] if "grid" in obj else [])
    fields = _sim_fields(obj, names)
    if "grid" in fields:
        fields["grid"] = FieldValue("f32", (8, 8, 3), fields["grid"].data)
    return fields, int(obj["stamp_ns"])


def sim_leader_cmd_adapter(payload: bytes) -> tuple[dict[str, FieldValue], int | None]:
    obj = _parse_json(payload, SIM_CMD_SCHEMA)
    return _sim_fields(obj, ["action"]), int(obj["stamp_ns"])


def register_sim_adapters(registry: AdapterRegistry, namespace: str = "") -> None:
    """Register the simulated-device adapters, optionally namespaced."""
    ns = namespace
    registry.register(AdapterSpec(SIM_EEF_SCHEMA, ns + "state/follower"), sim_eef_state_adapter)
    registry.register(AdapterSpec(SIM_SCENE_SCHEMA, ns + "obs/scene"), sim_scene_adapter)
    registry.register(AdapterSpec(SIM_CMD_SCHEMA, ns + "cmd/leader"), sim_leader_cmd_adapter)
