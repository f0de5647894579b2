"""Helpers shared by the diffusion and regression policy estimators."""

from __future__ import annotations

import numpy as np

from ..errors import SchemaMismatch
from .dataset import WindowDataset
from .normalize import MinMaxNormalizer
from . import nn


def fit_normalizers(ds: WindowDataset) -> tuple[MinMaxNormalizer, MinMaxNormalizer]:
    # window frames are replicate-padded copies of episode frames, so the
    # per-dimension min/max equal the frame-level stats
    obs_norm = MinMaxNormalizer().fit(ds.X.reshape(-1, ds.X.shape[-1]))
    act_norm = MinMaxNormalizer().fit(ds.Y.reshape(-1, ds.Y.shape[-1]))
    return obs_norm, act_norm


def normalize_windows(ds: WindowDataset, obs_norm: MinMaxNormalizer,
                      act_norm: MinMaxNormalizer) -> tuple[np.ndarray, np.ndarray]:
    n = ds.n
    xn = obs_norm.transform(ds.X.reshape(-1, ds.X.shape[-1])).reshape(n, -1)
    yn = act_norm.transform(ds.Y.reshape(-1, ds.Y.shape[-1])).reshape(n, -1)
    return xn, yn


def round_f32(params: nn.Params) -> nn.Params:
    """Checkpoint precision applied in place of the float64 master weights,
    so in-process sampling matches a save/load round trip exactly."""
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def episode_tasks(episodes) -> list[str]:
    tasks = {ep.meta.get("task", "") for ep in episodes if isinstance(ep.meta, dict)}
    return sorted(t for t in tasks if t)


def check_same_layout(expected, got) -> None:
    if expected.names != got.names or expected.shapes != got.shapes:
        raise SchemaMismatch(
            f"observation layout mismatch: checkpoint has {expected.names} "
            f"{expected.shapes}, dataset has {got.names} {got.shapes}")


def iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]
