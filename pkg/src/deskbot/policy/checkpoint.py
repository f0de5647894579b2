"""Versioned JSON checkpoints.

Layout (version 1):

  {
    "version": 1,
    "encoder":   {kind, hidden, embedding_dim, grid_field, obs_fields,
                  input_dim, weights},
    "denoiser":  {kind: "ddpm-mlp" | "bc-mlp", hidden, t_embed_dim?,
                  out_dim, weights},
    "normalizer": {obs: {min, max, constant}, action: {...}},
    "schedule":  {T, beta_min, beta_max} or null for the regression head,
    "chunk":     {T_o, T_p, T_a},
    "provenance": {tasks, epochs, parent_checkpoint, seed}
  }

Weights are float32-rounded flat lists with an explicit shape. Files are
canonical JSON (sorted keys, no whitespace), so identical training runs
produce byte-identical checkpoints.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import SchemaMismatch, VersionMismatch
from . import bc, diffusion, nn
from .dataset import ObsLayout
from .encoder import EncoderConfig, encoder_to_json
from .normalize import MinMaxNormalizer
from .schedule import make_schedule

CHECKPOINT_VERSION = 1


def _weights_to_json(params: nn.Params, prefix: str) -> dict:
    out = {}
    for name, arr in params.items():
        if not name.startswith(prefix):
            continue
        f32 = arr.astype(np.float32)
        out[name[len(prefix):]] = {
            "shape": list(arr.shape),
            "data": [float(v) for v in f32.ravel()],
        }
    return out


def _weights_from_json(obj: dict, prefix: str, params: nn.Params) -> None:
    for name, spec in obj.items():
        arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        params[prefix + name] = arr


def policy_to_json(policy) -> dict:
    enc = encoder_to_json(policy.enc_cfg_, policy.layout_, policy.T_o)
    enc["weights"] = _weights_to_json(policy.params_, "enc.")
    if isinstance(policy, diffusion.DiffusionPolicy):
        den = {
            "kind": diffusion.DENOISER_KIND,
            "hidden": list(policy.denoiser_hidden),
            "t_embed_dim": policy.t_embed_dim,
            "out_dim": policy.T_p * policy.action_dim_,
            "weights": _weights_to_json(policy.params_, "den."),
        }
        schedule = policy.schedule_.as_config()
    elif isinstance(policy, bc.BCPolicy):
        den = {
            "kind": bc.DENOISER_KIND,
            "hidden": list(policy.trunk_hidden),
            "out_dim": policy.T_p * policy.action_dim_,
            "weights": _weights_to_json(policy.params_, "den."),
        }
        schedule = None
    else:
        raise SchemaMismatch(f"cannot checkpoint {type(policy).__name__}")
    return {
        "version": CHECKPOINT_VERSION,
        "encoder": enc,
        "denoiser": den,
        "normalizer": {
            "obs": policy.obs_norm_.to_json(),
            "action": policy.act_norm_.to_json(),
        },
        "schedule": schedule,
        "chunk": {"T_o": policy.T_o, "T_p": policy.T_p, "T_a": policy.T_a},
        "provenance": policy.provenance_,
    }


def policy_from_json(obj: dict):
    version = obj.get("version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint version {version!r}, this build reads {CHECKPOINT_VERSION}")
    try:
        return _policy_from_json_v1(obj)
    except (KeyError, TypeError) as exc:
        # structurally incomplete file; same failure class as a bad version
        raise VersionMismatch(f"checkpoint missing or malformed field: {exc}") from exc


def _policy_from_json_v1(obj: dict):
    enc = obj["encoder"]
    den = obj["denoiser"]
    chunk = obj["chunk"]
    prov = obj["provenance"]
    kind = den["kind"]
    common = dict(
        encoder=enc["kind"], hidden=tuple(enc["hidden"]),
        embedding_dim=enc["embedding_dim"], grid_field=enc.get("grid_field"),
        T_o=chunk["T_o"], T_p=chunk["T_p"], T_a=chunk["T_a"],
        epochs=prov.get("epochs", 0), seed=prov.get("seed", 0),
    )
    if kind == diffusion.DENOISER_KIND:
        sch = obj["schedule"]
        policy = diffusion.DiffusionPolicy(
            denoiser_hidden=tuple(den["hidden"]),
            t_embed_dim=den.get("t_embed_dim", 32),
            T=sch["T"], beta_min=sch["beta_min"], beta_max=sch["beta_max"],
            **common)
        policy.schedule_ = make_schedule(sch["T"], sch["beta_min"], sch["beta_max"])
    elif kind == bc.DENOISER_KIND:
        policy = bc.BCPolicy(trunk_hidden=tuple(den["hidden"]), **common)
    else:
        raise SchemaMismatch(f"unknown denoiser kind {kind!r}")

    policy.layout_ = ObsLayout.from_json(enc["obs_fields"])
    policy.enc_cfg_ = EncoderConfig(enc["kind"], tuple(enc["hidden"]),
                                    enc["embedding_dim"], enc.get("grid_field"))
    policy.obs_norm_ = MinMaxNormalizer.from_json(obj["normalizer"]["obs"])
    policy.act_norm_ = MinMaxNormalizer.from_json(obj["normalizer"]["action"])
    policy.action_dim_ = den["out_dim"] // chunk["T_p"]
    params: nn.Params = {}
    _weights_from_json(enc["weights"], "enc.", params)
    _weights_from_json(den["weights"], "den.", params)
    policy.params_ = params
    policy.provenance_ = dict(prov)
    policy.loss_curve_ = []
    return policy


def checkpoint_bytes(policy) -> bytes:
    text = json.dumps(policy_to_json(policy), sort_keys=True,
                      separators=(",", ":"), allow_nan=False)
    return text.encode("utf-8")


def save_checkpoint(policy, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(policy))
    return path


def load_checkpoint(path):
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaMismatch(f"cannot read checkpoint {path}: {exc}") from exc
    return policy_from_json(obj)


def policy_from_checkpoint(obj: dict):
    return policy_from_json(obj)
