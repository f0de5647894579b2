import json

import pytest

from deskbot.bus import Bus, RawMessage
from deskbot.errors import DuplicateSchema, MalformedPayload, NoAdapter
from deskbot.frames import FieldValue, decode_json
from deskbot.translate import (
    AdapterRegistry,
    AdapterSpec,
    TranslationRunner,
    gripper_adapter,
    joint_state_adapter,
    translate,
)


def _joint_payload(q, stamp_s):
    return json.dumps({"schema": "joint_state.v1", "q": q, "stamp_s": stamp_s}).encode()


def test_joint_state_seconds_to_nanoseconds():
    reg = AdapterRegistry()
    reg.register(AdapterSpec("joint_state.v1", "state/joints"), joint_state_adapter)
    msg = RawMessage("raw/joints", "arm0", 4, 999, _joint_payload([0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 1.5))
    frame = translate(msg, reg)
    assert frame.topic == "state/joints"
    assert frame.source_id == "arm0" and frame.seq == 4
    assert frame.t_ns == 1_500_000_000  # stamp_s 1.5 -> ns
    fv = frame.fields["joint_pos"]
    assert fv.dtype == "f32" and fv.shape == (6,)


def test_gripper_bool_to_float():
    reg = AdapterRegistry()
    reg.register(AdapterSpec("gripper_state.v1", "state/gripper"), gripper_adapter)
    msg = RawMessage("raw/grip", "g0", 0, 77,
                     json.dumps({"schema": "gripper_state.v1", "open": True}).encode())
    frame = translate(msg, reg)
    assert frame.fields["gripper"] == FieldValue.f32([1.0], shape=(1,))
    assert frame.t_ns == 77  # no native stamp: bus time passes through

    msg2 = RawMessage("raw/grip", "g0", 1, 78,
                      json.dumps({"schema": "gripper_state.v1", "open": False}).encode())
    assert translate(msg2, reg).fields["gripper"].data[0] == 0.0


def test_duplicate_schema_rejected():
    reg = AdapterRegistry()
    spec = AdapterSpec("joint_state.v1", "state/joints")
    reg.register(spec, joint_state_adapter)
    with pytest.raises(DuplicateSchema):
        reg.register(spec, joint_state_adapter)


def test_unregistered_schema_is_no_adapter():
    reg = AdapterRegistry()
    msg = RawMessage("raw/x", "s", 0, 0, json.dumps({"schema": "mystery.v9"}).encode())
    with pytest.raises(NoAdapter):
        translate(msg, reg)


def test_truncated_payload_is_malformed():
    reg = AdapterRegistry()
    reg.register(AdapterSpec("joint_state.v1", "state/joints"), joint_state_adapter)
    whole = _joint_payload([0.1], 1.0)
    msg = RawMessage("raw/joints", "s", 0, 0, whole[: len(whole) // 2])
    with pytest.raises(MalformedPayload):
        translate(msg, reg)


def test_bad_field_contents_malformed():
    reg = AdapterRegistry()
    reg.register(AdapterSpec("joint_state.v1", "state/joints"), joint_state_adapter)
    msg = RawMessage("raw/joints", "s", 0, 0,
                     json.dumps({"schema": "joint_state.v1", "q": [], "stamp_s": 0}).encode())
    with pytest.raises(MalformedPayload):
        translate(msg, reg)


def test_runner_republishes_and_counts_unknown():
    bus = Bus()
    out = bus.subscribe("state/*")
    runner = TranslationRunner(bus, AdapterRegistry())
    runner.register_adapter(AdapterSpec("joint_state.v1", "state/joints"), joint_state_adapter)

    bus.publish("raw/joints", "arm0", 10, _joint_payload([1.0, 2.0], 0.5))
    bus.publish("raw/other", "dev9", 11, json.dumps({"schema": "unknown.v1"}).encode())
    bus.publish("raw/other", "dev9", 12, b"\x00 not json")
    n = runner.pump()
    assert n == 1
    assert runner.untranslated == 2

    msgs = out.pop_all()
    assert len(msgs) == 1
    frame = decode_json(msgs[0].payload)
    assert frame.topic == "state/joints"
    # identity preserved so alignment can trust (source, seq, t)
    assert (frame.source_id, frame.seq) == ("arm0", 0)
    assert frame.t_ns == 500_000_000
    runner.close()


def test_translate_is_stateless():
    reg = AdapterRegistry()
    reg.register(AdapterSpec("joint_state.v1", "state/joints"), joint_state_adapter)
    msg = RawMessage("raw/joints", "s", 2, 5, _joint_payload([0.5, 0.25], 2.0))
    assert translate(msg, reg) == translate(msg, reg)
