"""Checkpoint JSON: round trips, canonical bytes, version and schema gates."""

import json

import numpy as np
import pytest

from deskbot.errors import SchemaMismatch, VersionMismatch
from deskbot.policy import (BCPolicy, DiffusionPolicy, load_checkpoint,
                            save_checkpoint)
from deskbot.policy.checkpoint import (checkpoint_bytes, policy_from_checkpoint,
                                       policy_from_json, policy_to_json)


def test_roundtrip_diffusion_policy(tiny_policy, tmp_path):
    path = save_checkpoint(tiny_policy, tmp_path / "p.json")
    again = load_checkpoint(path)
    assert isinstance(again, DiffusionPolicy)
    assert again.T_o == tiny_policy.T_o
    assert again.T_p == tiny_policy.T_p
    assert again.T_a == tiny_policy.T_a
    assert again.layout_ == tiny_policy.layout_
    assert again.action_dim_ == tiny_policy.action_dim_
    assert set(again.params_) == set(tiny_policy.params_)
    for k in again.params_:
        assert np.array_equal(again.params_[k], tiny_policy.params_[k]), k
    assert np.array_equal(again.schedule_.alpha_bars,
                          tiny_policy.schedule_.alpha_bars)
    assert again.provenance_ == tiny_policy.provenance_


def test_roundtrip_sampling_identical(tiny_policy, tmp_path):
    again = load_checkpoint(save_checkpoint(tiny_policy, tmp_path / "p.json"))
    obs = np.linspace(0, 1, 76).reshape(2, 38)
    a = tiny_policy.sample_chunk(obs, seed=11, steps=20)
    b = again.sample_chunk(obs, seed=11, steps=20)
    assert np.array_equal(a, b)


def test_checkpoint_bytes_stable(tiny_policy):
    assert checkpoint_bytes(tiny_policy) == checkpoint_bytes(tiny_policy)
    # canonical form: sorted keys, no whitespace
    raw = checkpoint_bytes(tiny_policy)
    obj = json.loads(raw)
    assert raw == json.dumps(obj, sort_keys=True,
                             separators=(",", ":")).encode()


def test_save_load_save_byte_identical(tiny_policy, tmp_path):
    p1 = save_checkpoint(tiny_policy, tmp_path / "a.json")
    again = load_checkpoint(p1)
    p2 = save_checkpoint(again, tmp_path / "b.json")
    assert p1.read_bytes() == p2.read_bytes()


def test_schema_fields(tiny_policy):
    obj = policy_to_json(tiny_policy)
    assert obj["version"] == 1
    assert obj["encoder"]["kind"] == "state-mlp"
    assert obj["encoder"]["obs_fields"] == {
        "eef_pose": {"dtype": "f32", "shape": [3]},
        "scene": {"dtype": "f32", "shape": [35]},
    }
    assert obj["denoiser"]["kind"] == "ddpm-mlp"
    assert obj["denoiser"]["out_dim"] == 16 * 3
    assert obj["schedule"] == {"T": 100, "beta_min": 1e-4, "beta_max": 0.02}
    assert obj["chunk"] == {"T_o": 2, "T_p": 16, "T_a": 8}
    assert sorted(obj["provenance"]) == ["epochs", "parent_checkpoint",
                                         "seed", "tasks"]
    # weight names carry no module prefixes
    for name in list(obj["encoder"]["weights"]) + list(obj["denoiser"]["weights"]):
        assert not name.startswith(("enc.", "den."))
    w = obj["encoder"]["weights"]["mlp.0.W"]
    assert len(w["data"]) == int(np.prod(w["shape"]))


def test_roundtrip_bc_policy(tmp_path, reach_episodes):
    bc = BCPolicy(epochs=4, seed=1).fit(reach_episodes)
    obj = policy_to_json(bc)
    assert obj["denoiser"]["kind"] == "bc-mlp"
    assert obj["schedule"] is None
    assert "t_embed_dim" not in obj["denoiser"]
    again = load_checkpoint(save_checkpoint(bc, tmp_path / "bc.json"))
    assert isinstance(again, BCPolicy)
    obs = np.zeros((2, 38))
    assert np.array_equal(bc.sample_chunk(obs), again.sample_chunk(obs))


def test_version_gate():
    with pytest.raises(VersionMismatch, match="version"):
        policy_from_json({"version": 2})
    with pytest.raises(VersionMismatch):
        policy_from_json({})


def test_missing_field_is_version_mismatch(tiny_policy):
    obj = policy_to_json(tiny_policy)
    del obj["denoiser"]
    with pytest.raises(VersionMismatch, match="missing or malformed"):
        policy_from_json(obj)
    obj2 = policy_to_json(tiny_policy)
    del obj2["encoder"]["hidden"]
    with pytest.raises(VersionMismatch):
        policy_from_json(obj2)


def test_unreadable_file_is_schema_mismatch(tmp_path):
    bad = tmp_path / "ckpt.json"
    bad.write_text("{not json")
    with pytest.raises(SchemaMismatch, match="cannot read"):
        load_checkpoint(bad)
    with pytest.raises(SchemaMismatch):
        load_checkpoint(tmp_path / "absent.json")


def test_policy_from_checkpoint_facade(tiny_policy):
    obj = json.loads(checkpoint_bytes(tiny_policy))
    again = policy_from_checkpoint(obj)
    obs = np.full((2, 38), 0.25)
    assert np.array_equal(again.sample_chunk(obs, seed=2, steps=5),
                          tiny_policy.sample_chunk(obs, seed=2, steps=5))


def test_weights_are_f32_values(tiny_policy):
    obj = policy_to_json(tiny_policy)
    for section in ("encoder", "denoiser"):
        for entry in obj[section]["weights"].values():
            arr = np.asarray(entry["data"], dtype=np.float64)
            assert np.array_equal(arr, arr.astype(np.float32).astype(np.float64))


def test_finetune_records_parent_path(tiny_policy, reach_episodes, tmp_path):
    from deskbot.policy import finetune
    parent_path = save_checkpoint(tiny_policy, tmp_path / "parent.json")
    child = finetune(tiny_policy, reach_episodes, epochs=1, seed=2,
                     parent_path=str(parent_path))
    obj = policy_to_json(child)
    assert obj["provenance"]["parent_checkpoint"] == str(parent_path)
    again = load_checkpoint(save_checkpoint(child, tmp_path / "child.json"))
    assert again.provenance_["parent_checkpoint"] == str(parent_path)
