"""Turns aligned episodes into (obs window, action chunk) training pairs.

Every aligned tick yields one window: the T_o most recent observation
frames (replicate-padded at the episode start) paired with the next T_p
command labels. Labels past the episode end are zero actions: a demo ends
with the goal reached, so the continuation the chunk must model is "hold
still". Repeat-padding the last command instead teaches the policy to keep
moving through the goal, which measurably breaks terminal behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyDataset, SchemaMismatch
from ..recorder import AlignedEpisode

ACTION_FIELD = "action"


@dataclass(frozen=True)
class ObsLayout:
    """Fixed order and shape of the observation fields inside a flat vector.

    Field order is sorted by name so the layout is a pure function of the
    field set; slices locate each field inside the concatenated vector.
    """
    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]

    @property
    def dim(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def slices(self) -> dict[str, slice]:
        out = {}
        off = 0
        for name, shape in zip(self.names, self.shapes):
            n = int(np.prod(shape))
            out[name] = slice(off, off + n)
            off += n
        return out

    def shape_of(self, name: str) -> tuple[int, ...]:
        return self.shapes[self.names.index(name)]

    def to_json(self) -> dict:
        return {n: {"dtype": "f32", "shape": list(s)}
                for n, s in zip(self.names, self.shapes)}

    @classmethod
    def from_json(cls, obj: dict) -> "ObsLayout":
        names = tuple(sorted(obj))
        return cls(names, tuple(tuple(obj[n]["shape"]) for n in names))


def layout_from_episode(episode: AlignedEpisode,
                        names: tuple[str, ...] | None = None) -> ObsLayout:
    if not episode.ticks:
        raise EmptyDataset("episode has no aligned ticks")
    obs = episode.ticks[0].obs
    if names is None:
        names = tuple(sorted(obs))
    missing = [n for n in names if n not in obs]
    if missing:
        raise SchemaMismatch(f"episode lacks observation fields {missing}")
    return ObsLayout(tuple(names), tuple(tuple(obs[n].shape) for n in names))


def flatten_obs(tick_obs: dict, layout: ObsLayout) -> np.ndarray:
    parts = []
    for name, shape in zip(layout.names, layout.shapes):
        fv = tick_obs.get(name)
        if fv is None:
            raise SchemaMismatch(f"tick missing observation field {name!r}")
        if tuple(fv.shape) != shape:
            raise SchemaMismatch(
                f"field {name!r} has shape {tuple(fv.shape)}, layout expects {shape}")
        parts.append(fv.as_array().ravel().astype(np.float64))
    return np.concatenate(parts) if parts else np.empty(0)


@dataclass
class WindowDataset:
    X: np.ndarray            # (N, T_o, D_o)
    Y: np.ndarray            # (N, T_p, A)
    episode_ids: np.ndarray  # (N,) index into the episode list passed in
    tick_ids: np.ndarray     # (N,) tick index within the episode
    layout: ObsLayout
    T_o: int
    T_p: int

    @property
    def n(self) -> int:
        return self.X.shape[0]


def episode_arrays(episode: AlignedEpisode, layout: ObsLayout):
    """Per-tick flat obs matrix (L, D_o) and action matrix (L, A)."""
    obs_rows = []
    act_rows = []
    for tick in episode.ticks:
        obs_rows.append(flatten_obs(tick.obs, layout))
        fv = tick.action.get(ACTION_FIELD)
        if fv is None:
            raise SchemaMismatch(f"tick has no {ACTION_FIELD!r} command field")
        act_rows.append(fv.as_array().ravel().astype(np.float64))
    return np.asarray(obs_rows), np.asarray(act_rows)


def window_indices(length: int, k: int, T_o: int, T_p: int):
    """Obs indices (clamped into range at the start) and action indices,
    where -1 marks a past-the-end slot to be filled with a zero action."""
    obs_idx = np.clip(np.arange(k - T_o + 1, k + 1), 0, length - 1)
    act_idx = np.arange(k, k + T_p)
    act_idx[act_idx >= length] = -1
    return obs_idx, act_idx


def build_windows(episodes: list[AlignedEpisode], T_o: int = 2, T_p: int = 16,
                  layout: ObsLayout | None = None) -> WindowDataset:
    episodes = [ep for ep in episodes]
    if not episodes or all(not ep.ticks for ep in episodes):
        raise EmptyDataset("no aligned ticks to build windows from")
    if layout is None:
        first = next(ep for ep in episodes if ep.ticks)
        layout = layout_from_episode(first)
    xs, ys, eids, tids = [], [], [], []
    for ei, ep in enumerate(episodes):
        if not ep.ticks:
            continue
        obs_mat, act_mat = episode_arrays(ep, layout)
        L = obs_mat.shape[0]
        for k in range(L):
            oi, ai = window_indices(L, k, T_o, T_p)
            xs.append(obs_mat[oi])
            chunk = np.zeros((T_p, act_mat.shape[1]))
            valid = ai >= 0
            chunk[valid] = act_mat[ai[valid]]
            ys.append(chunk)
            eids.append(ei)
            tids.append(k)
    return WindowDataset(
        X=np.asarray(xs), Y=np.asarray(ys),
        episode_ids=np.asarray(eids, dtype=np.int64),
        tick_ids=np.asarray(tids, dtype=np.int64),
        layout=layout, T_o=T_o, T_p=T_p)
