"""Observation encoders shared by the diffusion and regression heads.

state-mlp  flattens the T_o observation frames and runs a small SiLU MLP.
grid-conv  routes the occupancy-grid field through one 3x3 valid conv and
           concatenates the conv features with the remaining dimensions
           before the projection to the embedding.

Grid channel packing is pinned for reimplementations: frames stack along
the channel axis frame-major, channel index = frame * C + grid_channel,
and conv output flattens in C order (row, col, channel).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SchemaMismatch
from . import nn
from .dataset import ObsLayout

STATE_MLP = "state-mlp"
GRID_CONV = "grid-conv"
CONV_CHANNELS = 8


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = STATE_MLP
    hidden: tuple[int, ...] = (128,)
    embedding_dim: int = 64
    grid_field: str | None = None

    def validate(self, layout: ObsLayout, T_o: int) -> None:
        if self.kind not in (STATE_MLP, GRID_CONV):
            raise SchemaMismatch(f"unknown encoder kind {self.kind!r}")
        if self.kind == GRID_CONV:
            if not self.grid_field:
                raise SchemaMismatch("grid-conv encoder needs a grid_field name")
            if self.grid_field not in layout.names:
                raise SchemaMismatch(
                    f"grid field {self.grid_field!r} not in observation layout")
            shape = layout.shape_of(self.grid_field)
            if len(shape) != 3 or shape[0] < 3 or shape[1] < 3:
                raise SchemaMismatch(
                    f"grid field must be (H, W, C) with H, W >= 3, got {shape}")


def _grid_slice(layout: ObsLayout, grid_field: str) -> slice:
    return layout.slices()[grid_field]


def _split_frames(x: np.ndarray, layout: ObsLayout, T_o: int, grid_field: str):
    """x: (B, T_o * D) -> grid (B, H, W, C*T_o) and rest (B, T_o * D_rest)."""
    b = x.shape[0]
    d = layout.dim
    h, w, c = layout.shape_of(grid_field)
    sl = _grid_slice(layout, grid_field)
    frames = x.reshape(b, T_o, d)
    grids = frames[:, :, sl].reshape(b, T_o, h, w, c)
    grid = np.concatenate([grids[:, f] for f in range(T_o)], axis=-1)
    rest = np.concatenate([frames[:, :, :sl.start], frames[:, :, sl.stop:]],
                          axis=2).reshape(b, -1)
    return grid, rest


def init_encoder(params: nn.Params, cfg: EncoderConfig, layout: ObsLayout,
                 T_o: int, rng: np.random.Generator) -> None:
    cfg.validate(layout, T_o)
    if cfg.kind == STATE_MLP:
        dims = [T_o * layout.dim, *cfg.hidden, cfg.embedding_dim]
        nn.init_mlp(params, "enc.mlp", dims, rng)
        return
    h, w, c = layout.shape_of(cfg.grid_field)
    nn.init_conv3x3(params, "enc.conv", c * T_o, CONV_CHANNELS, rng)
    conv_flat = (h - 2) * (w - 2) * CONV_CHANNELS
    rest = T_o * (layout.dim - h * w * c)
    dims = [conv_flat + rest, *cfg.hidden, cfg.embedding_dim]
    nn.init_mlp(params, "enc.mlp", dims, rng)


def encoder_forward(params: nn.Params, cfg: EncoderConfig, layout: ObsLayout,
                    T_o: int, x: np.ndarray):
    """x: (B, T_o * D_o) normalized obs -> (B, embedding_dim), cache."""
    n_mlp = len(cfg.hidden) + 1
    if cfg.kind == STATE_MLP:
        emb, mc = nn.mlp_forward(params, "enc.mlp", x, n_mlp)
        return emb, (None, mc)
    grid, rest = _split_frames(x, layout, T_o, cfg.grid_field)
    z, cc = nn.conv3x3_forward(params, "enc.conv", grid)
    feat = nn.silu(z).reshape(x.shape[0], -1)
    h = np.concatenate([feat, rest], axis=1)
    emb, mc = nn.mlp_forward(params, "enc.mlp", h, n_mlp)
    return emb, ((cc, z, feat.shape), mc)


def encoder_backward(params: nn.Params, cfg: EncoderConfig, cache,
                     demb: np.ndarray, grads: nn.Params) -> None:
    conv_cache, mc = cache
    dh = nn.mlp_backward(params, mc, demb, grads)
    if conv_cache is None:
        return
    cc, z, feat_shape = conv_cache
    n_feat = feat_shape[1]
    dfeat = dh[:, :n_feat].reshape(z.shape) * nn.silu_grad(z)
    nn.conv3x3_backward(params, cc, dfeat, grads)


def encoder_to_json(cfg: EncoderConfig, layout: ObsLayout, T_o: int) -> dict:
    return {
        "kind": cfg.kind,
        "hidden": list(cfg.hidden),
        "embedding_dim": cfg.embedding_dim,
        "grid_field": cfg.grid_field,
        "obs_fields": layout.to_json(),
        "input_dim": T_o * layout.dim,
    }
