"""Deterministic 2-D desk-top manipulation world with a scripted expert.

Stands in for the real rig: a follower arm (state stream), a leader teleop
arm (command stream) and an overhead camera (scene stream). The world is a
kinematic point end-effector in the unit square; a step applies a clipped
displacement plus a binary gripper command and advances the sim clock by one
control period. Episodes are pure functions of (task, seed, policy).

Views model camera placement: a rotation about the workspace center plus an
offset, applied to everything the camera reports (the scene vector and the
occupancy grid) but not to proprioception (eef_pose stays in the robot
frame). The scene vector has one fixed layout across all tasks so
checkpoints remain shape-compatible when finetuning on new tasks:

    [0:3]    eef       [x', y', gripper]
    [3:17]   2 object slots, each [present, x', y', color one-hot x4]
    [17:31]  2 receptacle slots, same layout
    [31:35]  obstacle  [present, x', y', radius]
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .bus import Bus
from .errors import TaskAlreadyDone
from .recorder import (
    AlignedEpisode,
    RawRecording,
    Recorder,
    SessionMeta,
    StreamSpec,
    align,
)
from .translate import (
    SIM_CMD_SCHEMA,
    SIM_EEF_SCHEMA,
    SIM_SCENE_SCHEMA,
    AdapterRegistry,
    TranslationRunner,
    register_sim_adapters,
)

MAX_STEP = 0.05          # per-component displacement bound
GRASP_RADIUS = 0.03
N_COLORS = 4
N_OBJECT_SLOTS = 2
N_RECEPTACLE_SLOTS = 2
SCENE_DIM = 3 + 7 * (N_OBJECT_SLOTS + N_RECEPTACLE_SLOTS) + 4
GRID_SHAPE = (8, 8, 3)   # channels: objects, receptacles+obstacle, eef
TASK_NAMES = ("reach", "pickplace", "sorting", "bimodal-avoid")

_ARRIVE_EPS = 1e-7       # waypoint arrival; exact landing up to float error
_RELEASE_TOL = 0.02      # drop radius while carrying; exact centering is
                         # unreachable once motion commands carry jitter


def _dist(a, b) -> float:
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


def _segment_dist(p0, p1, c) -> float:
    d = np.asarray(p1, dtype=np.float64) - np.asarray(p0, dtype=np.float64)
    denom = float(d @ d)
    if denom == 0.0:
        return _dist(p0, c)
    t = float(np.clip(((np.asarray(c) - p0) @ d) / denom, 0.0, 1.0))
    return _dist(p0 + t * d, c)


def _norm_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# --- world state ---

@dataclass(frozen=True)
class ObjectState:
    xy: np.ndarray
    color_id: int
    held: bool = False


@dataclass(frozen=True)
class ReceptacleState:
    xy: np.ndarray
    color_id: int
    radius: float


@dataclass(frozen=True)
class ObstacleState:
    xy: np.ndarray
    radius: float


@dataclass(frozen=True)
class WorldState:
    eef_xy: np.ndarray
    gripper: float
    objects: tuple[ObjectState, ...]
    receptacles: tuple[ReceptacleState, ...]
    obstacle: ObstacleState | None
    sim_t_ns: int
    contacts: int = 0    # cumulative obstacle entries; success predicates need history


@dataclass(frozen=True)
class Action:
    delta_xy: np.ndarray
    gripper_cmd: float

    @classmethod
    def zero(cls) -> "Action":
        return cls(np.zeros(2, dtype=np.float64), 0.0)

    @classmethod
    def from_vector(cls, v) -> "Action":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        return cls(v[:2].copy(), float(v[2]))

    def as_vector(self) -> np.ndarray:
        return np.array([self.delta_xy[0], self.delta_xy[1], self.gripper_cmd],
                        dtype=np.float64)


@dataclass(frozen=True)
class ViewTransform:
    """Rotation about the workspace center followed by an offset."""

    view_id: str
    rotation_rad: float = 0.0
    offset_xy: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not -math.pi <= self.rotation_rad < math.pi:
            raise ValueError(f"rotation must be in [-pi, pi), got {self.rotation_rad}")
        object.__setattr__(self, "offset_xy",
                           (float(self.offset_xy[0]), float(self.offset_xy[1])))

    def apply(self, xy) -> np.ndarray:
        c, s = math.cos(self.rotation_rad), math.sin(self.rotation_rad)
        dx, dy = xy[0] - 0.5, xy[1] - 0.5
        return np.array([0.5 + c * dx - s * dy + self.offset_xy[0],
                         0.5 + s * dx + c * dy + self.offset_xy[1]])

    def inverse(self) -> "ViewTransform":
        c, s = math.cos(-self.rotation_rad), math.sin(-self.rotation_rad)
        ox, oy = self.offset_xy
        return ViewTransform(self.view_id + "~",
                             _norm_angle(-self.rotation_rad),
                             (-(c * ox - s * oy), -(s * ox + c * oy)))


IDENTITY_VIEW = ViewTransform(view_id="front")


def make_view(view_id: str, rotation_rad: float = 0.0,
              offset_xy=(0.0, 0.0)) -> ViewTransform:
    return ViewTransform(view_id, _norm_angle(rotation_rad),
                         (float(offset_xy[0]), float(offset_xy[1])))


# --- task specs ---

def _check_range(r, label: str) -> tuple[float, float, float, float]:
    r = tuple(float(v) for v in r)
    if len(r) != 4:
        raise ValueError(f"{label}: range must be [x0, y0, x1, y1]")
    x0, y0, x1, y1 = r
    if not (0.0 <= x0 <= x1 <= 1.0 and 0.0 <= y0 <= y1 <= 1.0):
        raise ValueError(f"{label}: range {r} outside workspace or inverted")
    return r


@dataclass(frozen=True)
class SlotSpec:
    color_id: int
    range: tuple[float, float, float, float]

    def __post_init__(self):
        if not 0 <= self.color_id < N_COLORS:
            raise ValueError(f"color_id must be in [0, {N_COLORS}), got {self.color_id}")
        object.__setattr__(self, "range", _check_range(self.range, "slot"))


@dataclass(frozen=True)
class ReceptacleSpec(SlotSpec):
    radius: float = 0.05

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.radius <= 0.2:
            raise ValueError(f"receptacle radius out of range: {self.radius}")


@dataclass(frozen=True)
class ObstacleSpec:
    xy: tuple[float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "xy", (float(self.xy[0]), float(self.xy[1])))
        if not 0.0 < self.radius <= 0.4:
            raise ValueError(f"obstacle radius out of range: {self.radius}")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    max_steps: int
    eef_start_range: tuple[float, float, float, float]
    objects: tuple[SlotSpec, ...] = ()
    receptacles: tuple[ReceptacleSpec, ...] = ()
    obstacle: ObstacleSpec | None = None
    success_radius: float = 0.04
    detour_lateral: float = 0.25
    min_separation: float = 0.12

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ValueError(f"unknown task {self.name!r}; expected one of {TASK_NAMES}")
        if self.max_steps < 2:
            raise ValueError("max_steps must be >= 2")
        if len(self.objects) > N_OBJECT_SLOTS or len(self.receptacles) > N_RECEPTACLE_SLOTS:
            raise ValueError("more entities than scene slots")
        object.__setattr__(self, "eef_start_range",
                           _check_range(self.eef_start_range, "eef_start_range"))
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "receptacles", tuple(self.receptacles))


def _task_from_json(name: str, obj: dict) -> TaskSpec:
    objects = tuple(SlotSpec(color_id=o["color_id"], range=tuple(o["range"]))
                    for o in obj.get("objects", []))
    receptacles = tuple(
        ReceptacleSpec(color_id=r["color_id"], range=tuple(r["range"]),
                       radius=float(r.get("radius", 0.05)))
        for r in obj.get("receptacles", [])
    )
    obstacle = None
    if obj.get("obstacle") is not None:
        ob = obj["obstacle"]
        obstacle = ObstacleSpec(xy=tuple(ob["xy"]), radius=float(ob["radius"]))
    return TaskSpec(
        name=name,
        max_steps=int(obj["max_steps"]),
        eef_start_range=tuple(obj["eef_start_range"]),
        objects=objects,
        receptacles=receptacles,
        obstacle=obstacle,
        success_radius=float(obj.get("success_radius", 0.04)),
        detour_lateral=float(obj.get("detour_lateral", 0.25)),
        min_separation=float(obj.get("min_separation", 0.12)),
    )


def load_tasks(path: str | Path | None = None) -> dict[str, TaskSpec]:
    """Load task definitions from a JSON task file (schema in docs/tasks.md).

    Without a path the definitions packaged with the library are used.
    """
    if path is None:
        text = resources.files("deskbot").joinpath("tasks.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"task file is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ValueError("task file must map task names to definitions")
    out = {}
    for name, obj in raw.items():
        try:
            out[name] = _task_from_json(name, obj)
        except (KeyError, TypeError) as e:
            raise ValueError(f"task {name!r}: missing or bad field {e}") from e
    return out


def get_task(name: str, path: str | Path | None = None) -> TaskSpec:
    tasks = load_tasks(path)
    if name not in tasks:
        raise ValueError(f"task {name!r} not in task file (have {sorted(tasks)})")
    return tasks[name]


# --- world dynamics ---

def _draw_point(rng, box, keep_out, tries: int = 200) -> np.ndarray:
    lo = np.array([box[0], box[1]])
    hi = np.array([box[2], box[3]])
    for _ in range(tries):
        p = rng.uniform(lo, hi)
        if all(_dist(p, c) > r for c, r in keep_out):
            return p
    raise ValueError(f"could not place entity in {box} honoring keep-out zones")


def reset(task: TaskSpec, seed: int) -> WorldState:
    """Deterministic initial state for (task, seed); draws are order-fixed:
    receptacles, then objects, then the eef start."""
    rng = np.random.default_rng(seed)
    receptacles = []
    for spec in task.receptacles:
        keep_out = [(r.xy, task.min_separation) for r in receptacles]
        xy = _draw_point(rng, spec.range, keep_out)
        receptacles.append(ReceptacleState(xy=xy, color_id=spec.color_id,
                                           radius=spec.radius))
    objects = []
    for spec in task.objects:
        keep_out = [(r.xy, r.radius + GRASP_RADIUS) for r in receptacles]
        keep_out += [(o.xy, task.min_separation) for o in objects]
        if task.obstacle is not None:
            keep_out.append((task.obstacle.xy, task.obstacle.radius + GRASP_RADIUS))
        xy = _draw_point(rng, spec.range, keep_out)
        objects.append(ObjectState(xy=xy, color_id=spec.color_id))
    keep_out = []
    if task.name in ("reach", "bimodal-avoid") and receptacles:
        # never start already inside the goal disc
        keep_out.append((receptacles[0].xy, task.success_radius + 0.05))
    eef = _draw_point(rng, task.eef_start_range, keep_out)
    obstacle = None
    if task.obstacle is not None:
        obstacle = ObstacleState(xy=np.array(task.obstacle.xy),
                                 radius=task.obstacle.radius)
    return WorldState(eef_xy=eef, gripper=0.0, objects=tuple(objects),
                      receptacles=tuple(receptacles), obstacle=obstacle,
                      sim_t_ns=0, contacts=0)


def step(state: WorldState, action: Action,
         period_ns: int = 100_000_000) -> WorldState:
    """Apply one clipped displacement + gripper command; pure function."""
    delta = np.clip(np.asarray(action.delta_xy, dtype=np.float64),
                    -MAX_STEP, MAX_STEP)
    new_eef = np.clip(state.eef_xy + delta, 0.0, 1.0)
    close = float(action.gripper_cmd) > 0.5
    objects = list(state.objects)
    held_idx = next((i for i, o in enumerate(objects) if o.held), None)
    if close:
        if held_idx is not None:
            objects[held_idx] = replace(objects[held_idx], xy=new_eef.copy())
        else:
            best, best_d = None, GRASP_RADIUS
            for i, o in enumerate(objects):
                d = _dist(o.xy, new_eef)
                if d <= GRASP_RADIUS and (best is None or d < best_d):
                    best, best_d = i, d
            if best is not None:
                objects[best] = replace(objects[best], xy=new_eef.copy(), held=True)
        gripper = 1.0
    else:
        if held_idx is not None:
            objects[held_idx] = replace(objects[held_idx], held=False)
        gripper = 0.0
    contacts = state.contacts
    if state.obstacle is not None:
        was_in = _dist(state.eef_xy, state.obstacle.xy) <= state.obstacle.radius
        crossed = (_segment_dist(state.eef_xy, new_eef, state.obstacle.xy)
                   <= state.obstacle.radius)
        if crossed and not was_in:
            contacts += 1
    return replace(state, eef_xy=new_eef, gripper=gripper, objects=tuple(objects),
                   sim_t_ns=state.sim_t_ns + int(period_ns), contacts=contacts)


def _matched_receptacle(state: WorldState, color_id: int) -> ReceptacleState:
    for r in state.receptacles:
        if r.color_id == color_id:
            return r
    raise ValueError(f"no receptacle matches color {color_id}")


def _placed(state: WorldState, obj: ObjectState) -> bool:
    rec = _matched_receptacle(state, obj.color_id)
    return not obj.held and _dist(obj.xy, rec.xy) <= rec.radius


def is_success(state: WorldState, task: TaskSpec) -> bool:
    if task.name in ("reach", "bimodal-avoid"):
        at_goal = _dist(state.eef_xy, state.receptacles[0].xy) <= task.success_radius
        if task.name == "bimodal-avoid":
            return at_goal and state.contacts == 0
        return at_goal
    return all(_placed(state, o) for o in state.objects)


def observe(state: WorldState, view: ViewTransform = IDENTITY_VIEW,
            include_grid: bool = False) -> dict[str, np.ndarray]:
    """Observation fields: robot-frame "eef_pose", view-frame "scene" vector
    (layout in the module docstring) and optionally a view-frame occupancy
    "grid". All values f32."""
    eef_pose = np.array([state.eef_xy[0], state.eef_xy[1], state.gripper],
                        dtype=np.float32)
    scene = np.zeros(SCENE_DIM, dtype=np.float32)
    eef_v = view.apply(state.eef_xy)
    scene[0:2] = eef_v
    scene[2] = state.gripper
    base = 3
    for slot in range(N_OBJECT_SLOTS):
        if slot < len(state.objects):
            o = state.objects[slot]
            scene[base] = 1.0
            scene[base + 1:base + 3] = view.apply(o.xy)
            scene[base + 3 + o.color_id] = 1.0
        base += 7
    for slot in range(N_RECEPTACLE_SLOTS):
        if slot < len(state.receptacles):
            r = state.receptacles[slot]
            scene[base] = 1.0
            scene[base + 1:base + 3] = view.apply(r.xy)
            scene[base + 3 + r.color_id] = 1.0
        base += 7
    if state.obstacle is not None:
        scene[base] = 1.0
        scene[base + 1:base + 3] = view.apply(state.obstacle.xy)
        scene[base + 3] = state.obstacle.radius
    out = {"eef_pose": eef_pose, "scene": scene}
    if include_grid:
        out["grid"] = render_grid(state, view)
    return out


def render_grid(state: WorldState, view: ViewTransform = IDENTITY_VIEW) -> np.ndarray:
    """8x8x3 occupancy render in the view frame (bilinear point splats)."""
    h, w, _ = GRID_SHAPE
    grid = np.zeros(GRID_SHAPE, dtype=np.float32)

    def splat(xy, ch):
        u = xy[0] * w - 0.5
        v = xy[1] * h - 0.5
        i0, j0 = math.floor(u), math.floor(v)
        fu, fv = u - i0, v - j0
        for dj, wv in ((0, 1.0 - fv), (1, fv)):
            for di, wu in ((0, 1.0 - fu), (1, fu)):
                col, row = i0 + di, j0 + dj
                if 0 <= col < w and 0 <= row < h and wu * wv > 0.0:
                    grid[row, col, ch] += wu * wv

    for o in state.objects:
        splat(view.apply(o.xy), 0)
    for r in state.receptacles:
        splat(view.apply(r.xy), 1)
    if state.obstacle is not None:
        splat(view.apply(state.obstacle.xy), 1)
    splat(view.apply(state.eef_xy), 2)
    return grid


# --- scripted expert ---

class ScriptedExpert:
    """Waypoint controller standing in for the human teleoperator.

    One instance per episode: the bimodal detour side is drawn once, on the
    first action, and held for the rest of the episode.
    """

    def __init__(self, task: TaskSpec, rng, noise_sigma: float = 0.0):
        self._task = task
        self._rng = rng
        self._noise = float(noise_sigma)
        self._detour_side = None

    def action(self, state: WorldState) -> Action:
        if is_success(state, self._task):
            raise TaskAlreadyDone(f"{self._task.name}: episode already solved")
        if self._task.name == "reach":
            return self._go(state, state.receptacles[0].xy, grip=0.0)
        if self._task.name == "bimodal-avoid":
            return self._bimodal(state)
        return self._pick_and_place(state)

    def _step_toward(self, eef, target) -> np.ndarray:
        delta = np.asarray(target, dtype=np.float64) - eef
        if self._noise > 0.0:
            delta = delta + self._rng.normal(0.0, self._noise, size=2)
        return np.clip(delta, -MAX_STEP, MAX_STEP)

    def _go(self, state, target, grip: float) -> Action:
        return Action(self._step_toward(state.eef_xy, target), grip)

    def _bimodal(self, state) -> Action:
        if self._detour_side is None:
            self._detour_side = -1.0 if self._rng.random() < 0.5 else 1.0
        goal = state.receptacles[0].xy
        if state.eef_xy[1] < 0.5 - 1e-9:
            target = np.array([0.5 + self._detour_side * self._task.detour_lateral, 0.5])
        else:
            target = goal
        return self._go(state, target, grip=0.0)

    def _pick_and_place(self, state) -> Action:
        held = next((o for o in state.objects if o.held), None)
        if held is not None:
            rec = _matched_receptacle(state, held.color_id)
            # held objects ride the eef, so this is the object's own distance;
            # release drops at the pre-move spot, keeping it inside the band
            if _dist(state.eef_xy, rec.xy) <= _RELEASE_TOL:
                return Action(np.zeros(2), 0.0)     # stationary release
            return self._go(state, rec.xy, grip=1.0)
        obj = next(o for o in state.objects if not _placed(state, o))
        delta = self._step_toward(state.eef_xy, obj.xy)
        post = np.clip(state.eef_xy + delta, 0.0, 1.0)
        # close on the landing step; attachment checks the post-move pose
        grip = 1.0 if _dist(post, obj.xy) <= GRASP_RADIUS - 0.01 else 0.0
        return Action(delta, grip)


def expert_action(state: WorldState, task: TaskSpec, rng,
                  noise_sigma: float = 0.0) -> Action:
    """Single-shot facade over ScriptedExpert; bimodal episodes should hold
    one expert instance so the detour side stays fixed."""
    return ScriptedExpert(task, rng, noise_sigma).action(state)


# --- session publishing ---

@dataclass
class SessionConfig:
    decision_hz: int = 10
    state_hz: int = 60
    cmd_hz: int = 160
    obs_hz: int = 30
    operator: str = "scripted"
    view: ViewTransform = IDENTITY_VIEW
    include_grid: bool = False
    namespace: str = ""          # topic prefix, e.g. "s0/" for parallel sessions
    noise_sigma: float = 0.0
    max_steps: int | None = None  # override task.max_steps (short pipeline runs)


@dataclass
class SessionResult:
    n_decisions: int
    success: bool


def _frame_times(hz: int, t_end: int) -> list[int]:
    out = []
    i = 0
    while True:
        t = (i * 1_000_000_000 + hz // 2) // hz
        if t >= t_end:
            return out
        out.append(t)
        i += 1


def _dumps(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _f32list(values) -> list[float]:
    return [float(np.float32(v)) for v in values]


def run_session(bus: Bus, task: TaskSpec, seed: int,
                config: SessionConfig | None = None) -> SessionResult:
    """Run one expert episode, publishing native-format streams to the bus.

    The episode is simulated first (decisions at decision_hz), then frames
    are emitted in time order on the sim clock: follower state at state_hz,
    held leader commands at cmd_hz, camera scenes at obs_hz. The command
    stream holds the previous decision's action at the decision instant
    itself and switches to the new action strictly after it.
    """
    cfg = config or SessionConfig()
    period = round(1e9 / cfg.decision_hz)
    state = reset(task, seed)
    expert = ScriptedExpert(task, np.random.default_rng([seed, 7]), cfg.noise_sigma)
    max_steps = task.max_steps if cfg.max_steps is None else cfg.max_steps

    states = [state]
    actions: list[Action] = []
    success = False
    for _ in range(max_steps):
        if is_success(states[-1], task):
            success = True
            break
        a = expert.action(states[-1])
        actions.append(a)
        states.append(step(states[-1], a, period_ns=period))
    else:
        success = is_success(states[-1], task)
    if not actions:
        raise TaskAlreadyDone(f"{task.name} seed {seed}: solved at reset")

    t_end = len(actions) * period
    dec_times = [k * period for k in range(len(actions))]

    def state_at(t: int) -> WorldState:
        return states[bisect_left(dec_times, t)]

    def action_at(t: int) -> Action:
        k = bisect_left(dec_times, t) - 1
        return actions[k] if k >= 0 else Action.zero()

    events = []
    for hz, prio in ((cfg.state_hz, 0), (cfg.obs_hz, 1), (cfg.cmd_hz, 2)):
        events += [(t, prio) for t in _frame_times(hz, t_end)]
    events.sort()

    ns = cfg.namespace
    for t, prio in events:
        if prio == 0:
            s = state_at(t)
            payload = {"schema": SIM_EEF_SCHEMA, "stamp_ns": t,
                       "eef_pose": _f32list([s.eef_xy[0], s.eef_xy[1], s.gripper])}
            bus.publish(ns + "raw/eef_state", "follower-bot", t, _dumps(payload))
        elif prio == 1:
            fields = observe(state_at(t), cfg.view, cfg.include_grid)
            payload = {"schema": SIM_SCENE_SCHEMA, "stamp_ns": t,
                       "scene": fields["scene"].tolist()}
            if cfg.include_grid:
                payload["grid"] = fields["grid"].reshape(-1).tolist()
            bus.publish(ns + "raw/scene", "cam0", t, _dumps(payload))
        else:
            a = action_at(t)
            payload = {"schema": SIM_CMD_SCHEMA, "stamp_ns": t,
                       "action": _f32list([a.delta_xy[0], a.delta_xy[1],
                                           a.gripper_cmd])}
            bus.publish(ns + "raw/cmd", "leader-bot", t, _dumps(payload))
    return SessionResult(n_decisions=len(actions), success=success)


def session_stream_specs(cfg: SessionConfig) -> list[StreamSpec]:
    ns = cfg.namespace
    return [
        StreamSpec(ns + "state/follower", float(cfg.state_hz), "state"),
        StreamSpec(ns + "obs/scene", float(cfg.obs_hz), "observation"),
        StreamSpec(ns + "cmd/leader", float(cfg.cmd_hz), "command"),
    ]


def collect_episode(task: TaskSpec, seed: int, config: SessionConfig | None = None,
                    align_hz: float | None = None,
                    ) -> tuple[RawRecording, AlignedEpisode, SessionResult]:
    """One expert episode through the full pipeline:
    session -> bus -> translate -> record -> frequency stats -> align."""
    if isinstance(task, str):
        task = get_task(task)
    cfg = config or SessionConfig()
    bus = Bus()
    try:
        registry = AdapterRegistry()
        register_sim_adapters(registry, cfg.namespace)
        runner = TranslationRunner(bus, registry, pattern=cfg.namespace + "raw/*")
        meta = SessionMeta(task=task.name, operator=cfg.operator, seed=seed,
                           view_id=cfg.view.view_id)
        recorder = Recorder(bus, session_stream_specs(cfg), meta)
        result = run_session(bus, task, seed, cfg)
        runner.pump()
        raw = recorder.stop()
        episode = align(raw, align_hz=align_hz if align_hz is not None
                        else float(cfg.decision_hz))
        return raw, episode, result
    finally:
        bus.shutdown()
