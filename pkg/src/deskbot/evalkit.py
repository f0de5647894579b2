"""Policy evaluation: action-prediction MSE on held-out episodes, rollout
success rate in the simulated world, trajectory dumps (CSV/SVG) and the
mode-coverage metric for multimodal tasks.

An "endpoint" is anything with `layout_`, `T_o`, `T_p`, `T_a`, `action_dim_`
and `sample_chunk(obs_window, seed=..., steps=...) -> (T_p, A) f32`. Trained
policies satisfy this directly; `bridge.remote_policy` adapts a socket server
to the same surface.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EndpointUnavailable, IoError, SchemaMismatch
from .frames import FieldValue
from .noise_rng import derive_seed
from .policy import load_checkpoint, policy_from_checkpoint
from .policy.dataset import build_windows, flatten_obs
from .simworld import (IDENTITY_VIEW, Action, ScriptedExpert, TaskAlreadyDone,
                       get_task, is_success, observe, reset, step)

__all__ = [
    "ActionMSE", "EpisodeTrace", "RolloutResult", "EvalReport",
    "action_mse", "rollout", "mode_coverage", "dump_trajectories",
    "report_bytes", "ExpertEndpoint", "GroundTruthReplay",
]


def _endpoint_of(ckpt):
    """Accept a checkpoint path, checkpoint dict, or endpoint object."""
    if hasattr(ckpt, "sample_chunk"):
        return ckpt
    if isinstance(ckpt, dict):
        return policy_from_checkpoint(ckpt)
    return load_checkpoint(ckpt)


# --- action-prediction MSE ---

@dataclass(frozen=True)
class ActionMSE:
    per_dim: tuple[float, ...]
    aggregate: float                    # mean of per_dim, denormalized units
    aggregate_normalized: float | None  # same windows in normalizer space

    def to_json(self) -> dict:
        out = {"per_dim": list(self.per_dim), "aggregate": self.aggregate}
        if self.aggregate_normalized is not None:
            out["aggregate_normalized"] = self.aggregate_normalized
        return out


def action_mse(ckpt, heldout, seed: int = 0, steps: int | None = None) -> ActionMSE:
    """Squared error between sampled chunks and recorded labels.

    One chunk per window with a seed derived from (seed, episode, tick);
    only the executed horizon (first T_a rows) is scored, since the tail
    never reaches the robot. Per-dimension values are in raw action units.
    """
    endpoint = _endpoint_of(ckpt)
    ds = build_windows(list(heldout), T_o=endpoint.T_o, T_p=endpoint.T_p,
                       layout=endpoint.layout_)
    if ds.Y.shape[2] != endpoint.action_dim_:
        raise SchemaMismatch(
            f"heldout action dim {ds.Y.shape[2]} != checkpoint {endpoint.action_dim_}")
    T_a = endpoint.T_a
    sq = np.zeros(ds.Y.shape[2], dtype=np.float64)
    sq_norm = 0.0
    norm = getattr(endpoint, "act_norm_", None)
    for i in range(ds.n):
        chunk = endpoint.sample_chunk(
            ds.X[i], seed=derive_seed(seed, int(ds.episode_ids[i]), int(ds.tick_ids[i])),
            steps=steps)
        pred = np.asarray(chunk, dtype=np.float64)[:T_a]
        truth = np.asarray(ds.Y[i, :T_a], dtype=np.float64)
        sq += ((pred - truth) ** 2).mean(axis=0)
        if norm is not None:
            d = norm.transform(pred) - norm.transform(truth)
            sq_norm += float((d ** 2).mean())
    per_dim = sq / ds.n
    return ActionMSE(per_dim=tuple(float(v) for v in per_dim),
                     aggregate=float(per_dim.mean()),
                     aggregate_normalized=(sq_norm / ds.n) if norm is not None else None)


# --- rollouts ---

@dataclass
class EpisodeTrace:
    episode: int                 # reset seed, unique per episode
    rows: list = field(default_factory=list)  # (tick, t_ns, x, y, grip, success)
    success: bool = False
    contacts: int = 0
    steps: int = 0


@dataclass
class RolloutResult:
    task: str
    n: int
    seed: int
    success_rate: float
    traces: list
    partial: bool = False        # endpoint died mid-run; traces are a prefix

    @property
    def successes(self) -> int:
        return sum(t.success for t in self.traces)


def rollout(endpoint, task, n: int = 50, seed: int = 0,
            steps: int | None = None, view=IDENTITY_VIEW) -> RolloutResult:
    """Receding-horizon closed-loop evaluation.

    Episodes use reset seeds seed..seed+n-1. Each decision samples one chunk
    and executes its first T_a actions, re-querying afterwards; an episode
    ends on task success or after task.max_steps ticks. Chunk seeds are
    derived from (seed, episode seed, tick) so reports are reproducible.

    If the endpoint becomes unavailable the result is returned with
    partial=True and whatever episodes completed; success_rate still
    divides by the requested n.
    """
    endpoint = _endpoint_of(endpoint)
    if isinstance(task, str):
        task = get_task(task)
    include_grid = "grid" in endpoint.layout_.names
    traces = []
    partial = False
    for i in range(n):
        ep_seed = seed + i
        state = reset(task, ep_seed)
        hist = [_flat_obs(state, endpoint.layout_, view, include_grid)]
        trace = EpisodeTrace(episode=ep_seed)
        k, done = 0, False
        try:
            while k < task.max_steps and not done:
                window = np.stack([hist[max(0, len(hist) - endpoint.T_o + j)]
                                   for j in range(endpoint.T_o)])
                chunk = endpoint.sample_chunk(
                    window, seed=derive_seed(seed, ep_seed, k), steps=steps)
                for a_row in np.asarray(chunk)[:endpoint.T_a]:
                    state = step(state, Action.from_vector(
                        np.asarray(a_row, dtype=np.float64)))
                    k += 1
                    done = is_success(state, task)
                    trace.rows.append((k, state.sim_t_ns,
                                       float(state.eef_xy[0]), float(state.eef_xy[1]),
                                       float(state.gripper), done))
                    if done or k >= task.max_steps:
                        break
                hist.append(_flat_obs(state, endpoint.layout_, view, include_grid))
        except EndpointUnavailable:
            partial = True
            trace.contacts = state.contacts
            trace.steps = k
            traces.append(trace)
            break
        trace.success = done
        trace.contacts = state.contacts
        trace.steps = k
        traces.append(trace)
    rate = sum(t.success for t in traces) / n
    return RolloutResult(task=task.name, n=n, seed=seed, success_rate=rate,
                         traces=traces, partial=partial)


def _flat_obs(state, layout, view, include_grid: bool) -> np.ndarray:
    obs = observe(state, view, include_grid=include_grid)
    fields = {k: FieldValue("f32", v.shape, v) for k, v in obs.items()}
    return flatten_obs(fields, layout)


# --- mode coverage ---

def mode_coverage(samples, T_a: int = 8) -> dict[str, float]:
    """Fraction of chunks per behavior mode on a lateral-detour task.

    The mode label is the sign of the cumulative x displacement over the
    first T_a actions: negative -> "left", positive -> "right", exactly
    zero -> "degenerate". Absent modes are omitted; fractions sum to 1.
    """
    counts = {"left": 0, "right": 0, "degenerate": 0}
    samples = list(samples)
    for chunk in samples:
        lat = float(np.asarray(chunk, dtype=np.float64)[:T_a, 0].sum())
        if lat < 0.0:
            counts["left"] += 1
        elif lat > 0.0:
            counts["right"] += 1
        else:
            counts["degenerate"] += 1
    n = len(samples)
    return {k: v / n for k, v in counts.items() if v}


# --- trajectory dumps ---

_CSV_HEADER = ("episode", "tick", "t_ns", "eef_x", "eef_y", "gripper", "success")


def dump_trajectories(traces, path, format: str = "csv") -> Path:
    """Write rollout traces to one file; format "csv" or "svg".

    CSV columns: episode, tick, t_ns, eef_x, eef_y, gripper, success. Floats
    are written with repr so a parse-back reproduces the exact values. The
    SVG overlays eef paths in workspace coordinates, green for successful
    episodes and red for failures.
    """
    path = Path(path)
    try:
        if format == "csv":
            _write_csv(traces, path)
        elif format == "svg":
            _write_svg(traces, path)
        else:
            raise ValueError(f"format must be 'csv' or 'svg', got {format!r}")
        return path
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _write_csv(traces, path: Path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_CSV_HEADER)
        for t in traces:
            for tick, t_ns, x, y, grip, succ in t.rows:
                w.writerow([t.episode, tick, t_ns, repr(x), repr(y),
                            repr(grip), int(succ)])


def _write_svg(traces, path: Path):
    # workspace is the unit square; svg y axis points down, so flip
    size = 480
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="#fafafa" stroke="#ccc"/>']
    for t in traces:
        if not t.rows:
            continue
        pts = " ".join(f"{r[2] * size:.2f},{(1.0 - r[3]) * size:.2f}" for r in t.rows)
        color = "#2a2" if t.success else "#c33"
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5" opacity="0.7"/>')
        x0, y0 = t.rows[0][2] * size, (1.0 - t.rows[0][3]) * size
        out.append(f'<circle cx="{x0:.2f}" cy="{y0:.2f}" r="3" fill="{color}"/>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")


# --- report assembly ---

@dataclass
class EvalReport:
    task: str
    n: int
    seed: int
    success_rate: float
    action_mse: ActionMSE | None = None
    mode_coverage: dict | None = None
    partial: bool = False
    wall_time: float = 0.0       # informational; kept out of canonical bytes

    def to_json(self) -> dict:
        out = {"task": self.task, "n": self.n, "seed": self.seed,
               "success_rate": self.success_rate, "partial": self.partial,
               "action_mse": self.action_mse.to_json() if self.action_mse else None,
               "mode_coverage": self.mode_coverage}
        return out


def report_bytes(report: EvalReport) -> bytes:
    """Canonical report.json bytes; identical inputs give identical bytes,
    so wall-clock time stays out."""
    return json.dumps(report.to_json(), sort_keys=True,
                      separators=(",", ":"), allow_nan=False).encode()


# --- reference endpoints (oracles for the harness itself) ---

class ExpertEndpoint:
    """Scripted expert behind the endpoint surface.

    Reconstructs world state from the scene vector of the newest frame
    (identity view only: the scene stores view-frame coordinates) and runs
    the expert forward T_p simulated steps to fill a chunk. Held objects are
    recognized by their position coinciding with the eef. Contact history is
    not observable, so tasks whose success depends on it are evaluated
    optimistically here.
    """

    def __init__(self, task, layout, T_o: int = 2, T_p: int = 16, T_a: int = 8):
        if isinstance(task, str):
            task = get_task(task)
        self._task = task
        self.layout_ = layout
        self.T_o = T_o
        self.T_p = T_p
        self.T_a = T_a
        self.action_dim_ = 3

    def sample_chunk(self, obs_window, seed: int = 0, steps=None, eta=None):
        state = self._reconstruct(np.asarray(obs_window)[-1])
        expert = ScriptedExpert(self._task, np.random.default_rng(seed))
        rows = []
        for _ in range(self.T_p):
            try:
                a = expert.action(state)
            except TaskAlreadyDone:
                a = Action.zero()
            rows.append(a.as_vector())
            state = step(state, a)
        return np.asarray(rows, dtype=np.float32)

    def _reconstruct(self, flat):
        from .simworld import (N_OBJECT_SLOTS, N_RECEPTACLE_SLOTS, ObjectState,
                               ObstacleState, ReceptacleState, WorldState)
        scene = flat[self.layout_.slices()["scene"]].astype(np.float64)
        eef = scene[0:2].copy()
        grip = float(scene[2])
        base = 3
        objects = []
        for slot in range(N_OBJECT_SLOTS):
            if scene[base] > 0.5:
                xy = scene[base + 1:base + 3].copy()
                color = int(np.argmax(scene[base + 3:base + 7]))
                held = grip > 0.5 and bool(np.all(scene[base + 1:base + 3]
                                                  == scene[0:2]))
                objects.append(ObjectState(xy=xy, color_id=color, held=held))
            base += 7
        receptacles = []
        for slot in range(N_RECEPTACLE_SLOTS):
            if scene[base] > 0.5:
                xy = scene[base + 1:base + 3].copy()
                color = int(np.argmax(scene[base + 3:base + 7]))
                radius = self._task.receptacles[len(receptacles)].radius
                receptacles.append(ReceptacleState(xy=xy, color_id=color,
                                                   radius=radius))
            base += 7
        obstacle = None
        if scene[base] > 0.5:
            obstacle = ObstacleState(xy=scene[base + 1:base + 3].copy(),
                                     radius=float(scene[base + 3]))
        return WorldState(eef_xy=eef, gripper=grip, objects=tuple(objects),
                          receptacles=tuple(receptacles), obstacle=obstacle,
                          sim_t_ns=0, contacts=0)


class GroundTruthReplay:
    """Replays recorded labels in dataset order; action_mse on the same
    episodes is exactly zero, which separates harness bugs from model error."""

    def __init__(self, ds, T_a: int = 8):
        self._ds = ds
        self._cursor = 0
        self.layout_ = ds.layout
        self.T_o = ds.T_o
        self.T_p = ds.T_p
        self.T_a = T_a
        self.action_dim_ = ds.Y.shape[2]

    def sample_chunk(self, obs_window, seed: int = 0, steps=None, eta=None):
        chunk = self._ds.Y[self._cursor % self._ds.n]
        self._cursor += 1
        return np.asarray(chunk, dtype=np.float32)
