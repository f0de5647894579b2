"""Tabletop world: spawning, dynamics, views, the scripted expert, sessions."""

import json
import math

import numpy as np
import pytest

from deskbot.bus import Bus
from deskbot.errors import TaskAlreadyDone
from deskbot.simworld import (
    GRASP_RADIUS, GRID_SHAPE, IDENTITY_VIEW, MAX_STEP, SCENE_DIM, TASK_NAMES,
    Action, ObjectState, ObstacleState, ReceptacleState, ScriptedExpert,
    SessionConfig, WorldState, get_task, is_success, load_tasks, make_view,
    observe, render_grid, reset, run_session, step,
)


def bare_state(eef=(0.5, 0.5), objects=(), receptacles=(), obstacle=None,
               gripper=0.0):
    return WorldState(eef_xy=np.asarray(eef, dtype=np.float64), gripper=gripper,
                      objects=tuple(objects), receptacles=tuple(receptacles),
                      obstacle=obstacle, sim_t_ns=0)


def run_expert(task, seed, sigma=0.0):
    state = reset(task, seed)
    expert = ScriptedExpert(task, np.random.default_rng([seed, 7]), sigma)
    k = 0
    while k < task.max_steps and not is_success(state, task):
        state = step(state, expert.action(state))
        k += 1
    return state, k, expert


# --- task file ---

def test_builtin_tasks_load():
    tasks = load_tasks()
    assert set(tasks) == set(TASK_NAMES)
    srt = tasks["sorting"]
    assert len(srt.objects) == 2 and len(srt.receptacles) == 2
    # each object color has a matching receptacle to drop into
    rec_colors = {r.color_id for r in srt.receptacles}
    assert {o.color_id for o in srt.objects} <= rec_colors


def test_get_task_unknown_name():
    with pytest.raises(ValueError, match="not in task file"):
        get_task("juggling")


def test_task_file_not_json(tmp_path):
    p = tmp_path / "tasks.json"
    p.write_text("{nope")
    with pytest.raises(ValueError, match="not valid JSON"):
        load_tasks(p)


def test_task_file_not_mapping(tmp_path):
    p = tmp_path / "tasks.json"
    p.write_text("[1, 2]")
    with pytest.raises(ValueError, match="must map"):
        load_tasks(p)


def test_task_file_missing_field(tmp_path):
    p = tmp_path / "tasks.json"
    p.write_text(json.dumps({"reach": {"eef_start_range": [0, 0, 1, 1]}}))
    with pytest.raises(ValueError, match="missing or bad field"):
        load_tasks(p)


def test_task_file_unknown_task_name(tmp_path):
    p = tmp_path / "tasks.json"
    p.write_text(json.dumps(
        {"frisbee": {"max_steps": 10, "eef_start_range": [0, 0, 1, 1]}}))
    with pytest.raises(ValueError, match="unknown task"):
        load_tasks(p)


@pytest.mark.parametrize("patch", [
    {"max_steps": 1},
    {"eef_start_range": [0.9, 0.0, 0.1, 1.0]},          # inverted
    {"eef_start_range": [0.0, 0.0, 1.0, 1.5]},          # outside workspace
    {"objects": [{"color_id": 4, "range": [0, 0, 1, 1]}]},
    {"receptacles": [{"color_id": 0, "range": [0, 0, 1, 1], "radius": 0.3}]},
    {"obstacle": {"xy": [0.5, 0.5], "radius": 0.5}},
])
def test_task_validation_rejects(tmp_path, patch):
    base = {"max_steps": 10, "eef_start_range": [0.0, 0.0, 1.0, 1.0]}
    base.update(patch)
    p = tmp_path / "tasks.json"
    p.write_text(json.dumps({"reach": base}))
    with pytest.raises(ValueError):
        load_tasks(p)


# --- reset ---

def test_reset_deterministic():
    task = get_task("sorting")
    a, b = reset(task, 123), reset(task, 123)
    assert np.array_equal(a.eef_xy, b.eef_xy)
    for oa, ob in zip(a.objects, b.objects):
        assert np.array_equal(oa.xy, ob.xy) and oa.color_id == ob.color_id
    for ra, rb in zip(a.receptacles, b.receptacles):
        assert np.array_equal(ra.xy, rb.xy)
    assert not np.array_equal(a.eef_xy, reset(task, 124).eef_xy)


def in_box(p, box):
    return box[0] <= p[0] <= box[2] and box[1] <= p[1] <= box[3]


@pytest.mark.parametrize("name", TASK_NAMES)
def test_reset_respects_spawn_ranges(name):
    task = get_task(name)
    for seed in range(30):
        s = reset(task, seed)
        assert in_box(s.eef_xy, task.eef_start_range)
        assert s.gripper == 0.0 and s.sim_t_ns == 0 and s.contacts == 0
        for o, spec in zip(s.objects, task.objects):
            assert in_box(o.xy, spec.range) and not o.held
        for r, spec in zip(s.receptacles, task.receptacles):
            assert in_box(r.xy, spec.range) and r.radius == spec.radius


def test_reset_separation_and_goal_keepout():
    srt = get_task("sorting")
    for seed in range(50):
        s = reset(srt, seed)
        d = np.linalg.norm(s.receptacles[0].xy - s.receptacles[1].xy)
        assert d > srt.min_separation
        for o in s.objects:  # objects never spawn already in a receptacle
            for r in s.receptacles:
                assert np.linalg.norm(o.xy - r.xy) > r.radius + GRASP_RADIUS
    reach = get_task("reach")
    for seed in range(50):
        s = reset(reach, seed)
        d = np.linalg.norm(s.eef_xy - s.receptacles[0].xy)
        assert d > reach.success_radius + 0.05
        assert not is_success(s, reach)


# --- step dynamics ---

def test_step_zero_action():
    s0 = bare_state(eef=(0.3, 0.7))
    s1 = step(s0, Action.zero(), period_ns=100_000_000)
    assert np.array_equal(s1.eef_xy, s0.eef_xy)
    assert s1.sim_t_ns == 100_000_000 and s1.gripper == 0.0
    assert s0.sim_t_ns == 0  # pure function, input untouched


def test_step_clips_displacement_and_workspace():
    s = bare_state(eef=(0.5, 0.98))
    s = step(s, Action(np.array([0.2, 0.2]), 0.0))
    assert s.eef_xy[0] == pytest.approx(0.5 + MAX_STEP)
    assert s.eef_xy[1] == 1.0  # clamped at the edge


def test_grasp_within_radius():
    obj = ObjectState(xy=np.array([0.52, 0.5]), color_id=0)
    s = bare_state(eef=(0.5, 0.5), objects=[obj])
    s = step(s, Action(np.zeros(2), 1.0))  # close gripper, object 0.02 away
    assert s.objects[0].held and s.gripper == 1.0
    assert np.array_equal(s.objects[0].xy, s.eef_xy)


def test_grasp_misses_outside_radius():
    obj = ObjectState(xy=np.array([0.55, 0.5]), color_id=0)
    s = bare_state(eef=(0.5, 0.5), objects=[obj])
    s = step(s, Action(np.zeros(2), 1.0))  # 0.05 > grasp radius
    assert not s.objects[0].held
    assert s.gripper == 1.0  # gripper closes anyway, on nothing


def test_grasp_prefers_nearest():
    near = ObjectState(xy=np.array([0.51, 0.5]), color_id=0)
    far = ObjectState(xy=np.array([0.5, 0.52]), color_id=1)
    s = bare_state(objects=[far, near])
    s = step(s, Action(np.zeros(2), 1.0))
    assert s.objects[1].held and not s.objects[0].held


def test_held_object_tracks_eef_until_release():
    obj = ObjectState(xy=np.array([0.5, 0.5]), color_id=0)
    s = bare_state(objects=[obj])
    s = step(s, Action(np.zeros(2), 1.0))
    assert s.objects[0].held
    s = step(s, Action(np.array([0.04, -0.02]), 1.0))
    assert np.allclose(s.objects[0].xy, s.eef_xy)
    drop_at = s.objects[0].xy.copy()
    s = step(s, Action(np.array([0.03, 0.0]), 0.0))  # open while moving away
    assert not s.objects[0].held and s.gripper == 0.0
    assert np.array_equal(s.objects[0].xy, drop_at)  # released, not dragged


def test_obstacle_contact_counted_once_per_entry():
    obst = ObstacleState(xy=np.array([0.5, 0.5]), radius=0.05)
    s = bare_state(eef=(0.40, 0.5), obstacle=obst)
    s = step(s, Action(np.array([0.05, 0.0]), 0.0))  # lands on the rim
    assert s.contacts == 1
    s = step(s, Action(np.array([0.02, 0.0]), 0.0))  # still inside, no new entry
    assert s.contacts == 1
    s = step(s, Action(np.array([0.05, 0.0]), 0.0))
    s = step(s, Action(np.array([0.05, 0.0]), 0.0))  # leaves (x=0.57)
    s = step(s, Action(np.array([-0.05, 0.0]), 0.0))  # re-enters
    assert s.contacts == 2


def test_obstacle_crossing_detected_on_segment():
    # the move passes through the disc even though both endpoints are outside
    obst = ObstacleState(xy=np.array([0.5, 0.5]), radius=0.01)
    s = bare_state(eef=(0.47, 0.5), obstacle=obst)
    s = step(s, Action(np.array([0.05, 0.0]), 0.0))
    assert s.contacts == 1


# --- success predicates ---

def test_success_reach_disc():
    task = get_task("reach")
    rec = ReceptacleState(xy=np.array([0.5, 0.5]), color_id=0, radius=0.05)
    assert is_success(bare_state(eef=(0.5, 0.51), receptacles=[rec]), task)
    assert not is_success(bare_state(eef=(0.5, 0.56), receptacles=[rec]), task)


def test_success_bimodal_requires_clean_run():
    task = get_task("bimodal-avoid")
    rec = ReceptacleState(xy=np.array([0.5, 0.5]), color_id=0, radius=0.05)
    ok = bare_state(eef=(0.5, 0.5), receptacles=[rec])
    assert is_success(ok, task)
    from dataclasses import replace
    assert not is_success(replace(ok, contacts=1), task)


def test_success_sorting_needs_matching_colors():
    task = get_task("sorting")
    recs = [ReceptacleState(xy=np.array([0.2, 0.2]), color_id=0, radius=0.05),
            ReceptacleState(xy=np.array([0.8, 0.8]), color_id=1, radius=0.05)]
    placed = [ObjectState(xy=np.array([0.2, 0.21]), color_id=0),
              ObjectState(xy=np.array([0.8, 0.8]), color_id=1)]
    assert is_success(bare_state(objects=placed, receptacles=recs), task)
    swapped = [ObjectState(xy=np.array([0.8, 0.8]), color_id=0),
               ObjectState(xy=np.array([0.2, 0.2]), color_id=1)]
    assert not is_success(bare_state(objects=swapped, receptacles=recs), task)
    carried = [ObjectState(xy=np.array([0.2, 0.2]), color_id=0, held=True),
               ObjectState(xy=np.array([0.8, 0.8]), color_id=1)]
    assert not is_success(bare_state(objects=carried, receptacles=recs), task)


# --- views ---

def test_view_center_is_rotation_fixed_point():
    for ang in (0.3, -1.2, math.pi / 2, -math.pi):
        v = make_view("v", ang)
        assert np.allclose(v.apply((0.5, 0.5)), (0.5, 0.5))


def test_view_quarter_turn():
    v = make_view("q", math.pi / 2)
    assert np.allclose(v.apply((0.6, 0.5)), (0.5, 0.6))
    assert np.allclose(v.apply((0.5, 0.6)), (0.4, 0.5))


def test_view_inverse_roundtrip():
    v = make_view("v", 0.7, offset_xy=(0.05, -0.02))
    p = np.array([0.3, 0.8])
    assert np.allclose(v.inverse().apply(v.apply(p)), p)


def test_view_rotation_normalized():
    # full turn plus a bit lands back in [-pi, pi)
    v = make_view("v", 2 * math.pi + 0.25)
    assert v.rotation_rad == pytest.approx(0.25)


# --- observe ---

def test_observe_layout_identity_view():
    obj = ObjectState(xy=np.array([0.25, 0.75]), color_id=2)
    rec = ReceptacleState(xy=np.array([0.9, 0.1]), color_id=3, radius=0.05)
    obst = ObstacleState(xy=np.array([0.5, 0.4]), radius=0.07)
    s = bare_state(eef=(0.3, 0.6), objects=[obj], receptacles=[rec],
                   obstacle=obst, gripper=1.0)
    out = observe(s)
    assert set(out) == {"eef_pose", "scene"}
    assert out["scene"].shape == (SCENE_DIM,) and out["scene"].dtype == np.float32
    assert np.allclose(out["eef_pose"], [0.3, 0.6, 1.0])
    sc = out["scene"]
    assert np.allclose(sc[0:3], [0.3, 0.6, 1.0])
    # object slot 0: present, xy, one-hot color 2
    assert sc[3] == 1.0 and np.allclose(sc[4:6], [0.25, 0.75])
    assert list(sc[6:10]) == [0.0, 0.0, 1.0, 0.0]
    assert np.all(sc[10:17] == 0.0)  # empty second slot
    # receptacle slot 0: present, xy, one-hot color 3
    assert sc[17] == 1.0 and np.allclose(sc[18:20], [0.9, 0.1])
    assert list(sc[20:24]) == [0.0, 0.0, 0.0, 1.0]
    assert np.all(sc[24:31] == 0.0)
    # obstacle block: present, xy, radius
    assert sc[31] == 1.0 and np.allclose(sc[32:34], [0.5, 0.4])
    assert sc[34] == pytest.approx(0.07)


def test_observe_scene_rotates_eef_pose_does_not():
    s = bare_state(eef=(0.6, 0.5))
    out = observe(s, make_view("q", math.pi / 2))
    assert np.allclose(out["eef_pose"][:2], [0.6, 0.5])  # robot frame
    assert np.allclose(out["scene"][0:2], [0.5, 0.6])    # view frame


def test_observe_grid_optional():
    s = bare_state()
    assert "grid" not in observe(s)
    g = observe(s, include_grid=True)["grid"]
    assert g.shape == GRID_SHAPE and g.dtype == np.float32


def test_render_grid_splat_mass():
    # a point exactly on a cell centre puts all its mass in that cell
    h, w, _ = GRID_SHAPE
    x = (3 + 0.5) / w
    y = (5 + 0.5) / h
    s = bare_state(eef=(x, y))
    g = render_grid(s)
    assert g[5, 3, 2] == pytest.approx(1.0)
    assert g[:, :, 2].sum() == pytest.approx(1.0)
    g2 = render_grid(bare_state(eef=(x + 0.5 / w, y)))  # between two cells
    assert g2[:, :, 2].sum() == pytest.approx(1.0)
    assert g2[5, 3, 2] == pytest.approx(0.5) and g2[5, 4, 2] == pytest.approx(0.5)


def test_render_grid_channels():
    obj = ObjectState(xy=np.array([0.3, 0.3]), color_id=0)
    rec = ReceptacleState(xy=np.array([0.7, 0.7]), color_id=0, radius=0.05)
    obst = ObstacleState(xy=np.array([0.7, 0.3]), radius=0.05)
    g = render_grid(bare_state(eef=(0.1, 0.9), objects=[obj],
                               receptacles=[rec], obstacle=obst))
    assert g[:, :, 0].sum() == pytest.approx(1.0)   # objects
    assert g[:, :, 1].sum() == pytest.approx(2.0)   # receptacle + obstacle
    assert g[:, :, 2].sum() == pytest.approx(1.0)   # eef


# --- scripted expert ---

def test_expert_raises_when_already_solved():
    task = get_task("reach")
    rec = ReceptacleState(xy=np.array([0.5, 0.5]), color_id=0, radius=0.05)
    solved = bare_state(eef=(0.5, 0.5), receptacles=[rec])
    expert = ScriptedExpert(task, np.random.default_rng(0))
    with pytest.raises(TaskAlreadyDone):
        expert.action(solved)


@pytest.mark.parametrize("name", TASK_NAMES)
def test_expert_solves_noiseless(name):
    task = get_task(name)
    for seed in range(10):
        state, k, _ = run_expert(task, seed)
        assert is_success(state, task), f"seed {seed} failed after {k} steps"
        if name == "bimodal-avoid":
            assert state.contacts == 0


def test_expert_solves_with_noise():
    task = get_task("sorting")
    wins = sum(is_success(run_expert(task, seed, sigma=0.005)[0], task)
               for seed in range(20))
    assert wins >= 18


def test_expert_actions_bounded():
    task = get_task("sorting")
    state = reset(task, 5)
    expert = ScriptedExpert(task, np.random.default_rng(5), 0.01)
    for _ in range(40):
        if is_success(state, task):
            break
        a = expert.action(state)
        assert np.all(np.abs(a.delta_xy) <= MAX_STEP + 1e-12)
        assert a.gripper_cmd in (0.0, 1.0)
        state = step(state, a)


def test_bimodal_detour_sides_balanced():
    # per-seed rng makes this split deterministic; both modes well represented
    task = get_task("bimodal-avoid")
    left = 0
    for seed in range(200):
        _, _, expert = run_expert(task, seed, sigma=0.01)
        assert expert._detour_side in (-1.0, 1.0)
        left += expert._detour_side < 0
    assert 80 <= left <= 120


def test_bimodal_expert_detours_laterally():
    task = get_task("bimodal-avoid")
    for seed in (0, 1, 2):
        state = reset(task, seed)
        expert = ScriptedExpert(task, np.random.default_rng([seed, 7]), 0.0)
        max_lat = 0.0
        while not is_success(state, task):
            state = step(state, expert.action(state))
            max_lat = max(max_lat, abs(state.eef_xy[0] - 0.5))
        assert state.contacts == 0
        assert max_lat > 0.15  # went around, not through


# --- sessions ---

def test_run_session_paper_rate_frame_counts():
    # 10 forced decisions at 10 Hz = a 1 s session
    bus = Bus()
    by_topic = {}
    try:
        sub = bus.subscribe("raw/*")
        res = run_session(bus, get_task("sorting"), 0,
                          SessionConfig(max_steps=10))
        for m in sub.pop_all():
            by_topic.setdefault(m.topic, []).append(m)
    finally:
        bus.shutdown()
    assert res.n_decisions == 10 and not res.success
    assert len(by_topic["raw/eef_state"]) == 60
    assert len(by_topic["raw/cmd"]) == 160
    assert len(by_topic["raw/scene"]) == 30
    ts = [m.t_ns for m in by_topic["raw/scene"]]
    assert ts == sorted(ts) and ts[0] == 0


def test_run_session_deterministic_bytes():
    def capture():
        bus = Bus()
        try:
            sub = bus.subscribe("raw/*")
            run_session(bus, get_task("pickplace"), 3,
                        SessionConfig(noise_sigma=0.004))
            return [(m.topic, m.t_ns, m.payload) for m in sub.pop_all()]
        finally:
            bus.shutdown()

    assert capture() == capture()


def test_run_session_namespace_prefix():
    bus = Bus()
    try:
        sub = bus.subscribe("sess7/raw/*")
        run_session(bus, get_task("reach"), 1,
                    SessionConfig(namespace="sess7/", max_steps=3))
        topics = {m.topic for m in sub.pop_all()}
    finally:
        bus.shutdown()
    assert topics == {"sess7/raw/eef_state", "sess7/raw/cmd", "sess7/raw/scene"}


def test_run_session_success_stops_early():
    bus = Bus()
    try:
        res = run_session(bus, get_task("reach"), 0, SessionConfig())
    finally:
        bus.shutdown()
    assert res.success and res.n_decisions < get_task("reach").max_steps
