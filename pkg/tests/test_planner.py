import copy
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dhrrt.geometry import ConvexPolygon, Pose2
from dhrrt.harness.executor import PerfectExecutor, SimExecutor
from dhrrt.kinematics import ArmModel, Twist, jacobian_projection, solve_ik
from dhrrt.physics import SystemState, Workspace, World
from dhrrt.planner import (
    DEPTH, GOAL, HORIZON, CostModel, DistanceWeights, MotionTree, PlannerConfig, SimClock, WallClock,
    evaluate_progress, expand_tree, extract_controls, nearest, plan_dhrrt, plan_kdrrt, sample_control,
    sample_state, state_distance,
)
from dhrrt.tasks import RelocateTask, make_grasp_task

ARM = ArmModel(Pose2(0, 0, math.pi / 2), (0.4, 0.35, 0.25, 0.12), ((-2.9, 2.9),) * 4)
Q0 = solve_ik(ARM, Pose2(0.0, 0.32, math.pi / 2), [-1.4, 1.9, 1.5, -2.0])
WS = Workspace(-0.45, 0.45, 0.2, 1.0)
CUBE = ConvexPolygon.box(0.05, 0.05)


def one_cube(pose=(0.0, 0.45, 0.0)):
    w = World(ARM, [CUBE], WS)
    return w, w.make_state(Q0, [Pose2(*pose)])


def clutter():
    w = World(ARM, [CUBE] * 3, WS)
    return w, w.make_state(Q0, [Pose2(0.0, 0.45, 0.1), Pose2(0.08, 0.5, -0.3), Pose2(-0.1, 0.48, 0.5)])


def synthetic(gripper, objects=((0, 0),)):
    objs = np.array([(x, y, 0.0) for x, y in objects])
    return SystemState(np.zeros(0), objs, True, Pose2(*gripper))


def chain_tree(hs, in_goal=None):
    """Tree whose node k (k >= 1) hangs under node k - 1."""
    t = MotionTree(synthetic((0, 0, 0)), hs[0])
    for k, h in enumerate(hs[1:], 1):
        t.add(k - 1, synthetic((k, 0, 0)), None, h, bool(in_goal and in_goal[k]))
    return t


# ---- distance, nearest, sampling

def test_state_distance_examples():
    a = synthetic((0, 0, 0))
    assert state_distance(a, a) == 0.0
    assert state_distance(a, synthetic((1, 0, 0)), DistanceWeights(1.0, 0.5)) == pytest.approx(1.0)
    assert state_distance(a, synthetic((0, 0, math.pi))) == pytest.approx(0.1 * math.pi)
    assert state_distance(a, synthetic((0, 0, 0), [(3, 4)])) == pytest.approx(0.5 * 5)
    # Angles are wrapped before differencing.
    assert state_distance(synthetic((0, 0, 3.1)), synthetic((0, 0, -3.1))) == pytest.approx(0.1 * (2 * math.pi - 6.2))


def test_state_distance_rejects_mismatch():
    with pytest.raises(ValueError):
        state_distance(synthetic((0, 0, 0)), synthetic((0, 0, 0), [(0, 0), (1, 1)]))


coords = st.floats(-2, 2)


@settings(max_examples=200)
@given(st.tuples(coords, coords, st.floats(-4, 4), coords, coords), st.tuples(coords, coords, st.floats(-4, 4), coords, coords))
def test_state_distance_symmetric(a, b):
    qa = synthetic(a[:3], [a[3:]])
    qb = synthetic(b[:3], [b[3:]])
    assert state_distance(qa, qb) == pytest.approx(state_distance(qb, qa), abs=1e-12)
    assert state_distance(qa, qb) >= 0.0


def test_nearest_single_node():
    t = chain_tree([1.0])
    assert nearest(t, synthetic((5, 5, 1))) == 0


def test_nearest_exact_match():
    t = chain_tree([1.0, 0.5])
    assert nearest(t, synthetic((1, 0, 0))) == 1


def test_nearest_ties_lowest_id():
    t = MotionTree(synthetic((1, 0, 0)), 0.0)
    t.add(0, synthetic((-1, 0, 0)), None, 0.0, False)
    t.add(0, synthetic((1, 0, 0)), None, 0.0, False)
    assert nearest(t, synthetic((0, 0, 0))) == 0


def test_nearest_matches_linear_scan():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mk = lambda: synthetic((*rng.uniform(-1, 1, 2), rng.uniform(-3, 3)), rng.uniform(-1, 1, (3, 2)))
        t = MotionTree(mk(), 0.0)
        for k in range(99):
            t.add(int(rng.integers(len(t))), mk(), None, 0.0, False)
        q = mk()
        oracle = min(range(len(t)), key=lambda i: (state_distance(t.states[i], q), i))
        got = nearest(t, q)
        assert state_distance(t.states[got], q) == pytest.approx(state_distance(t.states[oracle], q), abs=1e-12)


def test_sample_state_bounds_and_reproducible():
    w, _ = clutter()
    cfg = PlannerConfig()
    a = [sample_state(np.random.default_rng(3), w, cfg) for _ in range(2)]
    assert a[0].gripper == a[1].gripper and np.array_equal(a[0].objects, a[1].objects)
    rng = np.random.default_rng(4)
    for _ in range(500):
        q = sample_state(rng, w, cfg)
        assert WS.contains(q.gripper.x, q.gripper.y)
        assert all(WS.contains(x, y) for x, y, _ in q.objects)
        assert np.all(np.abs(q.objects[:, 2]) <= math.pi)


def test_sample_state_goal_bias():
    w, _ = clutter()
    cfg = PlannerConfig(goal_bias=1 - 1e-12, bias_radius=0.05)
    rng = np.random.default_rng(5)
    for _ in range(500):
        g = sample_state(rng, w, cfg, focus=(0.1, 0.6)).gripper
        assert math.hypot(g.x - 0.1, g.y - 0.6) <= 0.05


def test_sample_state_uniform_mean():
    w, _ = clutter()
    rng = np.random.default_rng(6)
    n = 10_000
    S = np.array([[q.gripper.x, q.gripper.y, *q.objects[:, :2].ravel()]
                  for q in (sample_state(rng, w, PlannerConfig()) for _ in range(n))])
    for col in range(S.shape[1]):
        lo, hi = (WS.xmin, WS.xmax) if col % 2 == 0 else (WS.ymin, WS.ymax)
        sigma = (hi - lo) / math.sqrt(12 * n)
        assert abs(S[:, col].mean() - 0.5 * (lo + hi)) <= 3 * sigma


def test_sample_control_bounds():
    cfg = PlannerConfig(max_linear=0.1, max_angular=0.5, duration=0.4)
    rng = np.random.default_rng(7)
    for _ in range(1000):
        v = sample_control(rng, cfg)
        assert abs(v.vx) <= 0.1 and abs(v.vy) <= 0.1 and abs(v.omega) <= 0.5
        assert v.duration == 0.4


def test_config_validation():
    for bad in (dict(M=0), dict(p=0), dict(D_max=0), dict(time_budget=0), dict(goal_bias=1.0), dict(clock="x")):
        with pytest.raises(ValueError):
            PlannerConfig(**bad)


# ---- expansion

RELOC = RelocateTask(0, (0.0, 0.6), 0.1)


def test_expand_single_candidate_matches_step():
    w, s = clutter()
    cfg = PlannerConfig(M=1)
    tree = MotionTree(s, RELOC.heuristic(s, w))
    for seed in range(10):
        rng = np.random.default_rng(seed)
        twin = copy.deepcopy(rng)
        before = len(tree)
        nid = expand_tree(tree, rng, RELOC, w, cfg)
        sample_state(twin, w, cfg)
        v = sample_control(twin, cfg)
        if nid is None:
            assert len(tree) == before
            continue
        parent = tree.parent[nid]
        assert tree.states[nid] == w.step(tree.states[parent], v)
        assert tree.segment[nid].source_twist == v


def test_expand_matches_enumeration():
    w, s = clutter()
    cfg = PlannerConfig(M=10)
    tree = MotionTree(s, RELOC.heuristic(s, w))
    grown = 0
    for seed in range(15):
        rng = np.random.default_rng(100 + seed)
        twin = copy.deepcopy(rng)
        q_rand = sample_state(twin, w, cfg)
        near = min(range(len(tree)), key=lambda i: (state_distance(tree.states[i], q_rand), i))
        rollouts = []
        for _ in range(10):
            v = sample_control(twin, cfg)
            rollouts.append((w.step(tree.states[near], v), v))
        valid = [(state_distance(q, q_rand), k, q, v) for k, (q, v) in enumerate(rollouts) if q.valid]
        nid = expand_tree(tree, rng, RELOC, w, cfg)
        if not valid:
            assert nid is None
            continue
        _, _, q_best, v_best = min(valid, key=lambda t: (t[0], t[1]))
        proj = jacobian_projection(ARM, tree.states[near].joints, v_best, obstacles=w.obstacles)
        if proj is None:
            assert nid is None
            continue
        grown += 1
        assert tree.parent[nid] == near
        assert tree.states[nid] == q_best
        assert tree.segment[nid] == proj
        assert tree.h[nid] == RELOC.heuristic(q_best, w)
    assert grown >= 5


def check_tree(tree, world):
    n = len(tree)
    assert tree.parent[0] == -1
    assert sum(1 for p in tree.parent if p == -1) == 1
    for i in range(1, n):
        assert 0 <= tree.parent[i] < i
        assert tree.depth[i] == tree.depth[tree.parent[i]] + 1
    for i in range(n):
        assert sum(1 for p in tree.parent if p == i) == tree.n_children[i]
        q = tree.states[0]
        segs = extract_controls(tree, i)
        assert len(segs) == tree.depth[i]
        for seg in segs:
            q, ok, _ = world.apply_segment(q, seg)
            assert ok
        assert q == tree.states[i]
        assert q.valid


def test_tree_invariants_and_replay_on_seeded_trees():
    w, s = clutter()
    cfg = PlannerConfig(M=3)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        tree = MotionTree(s, RELOC.heuristic(s, w))
        for _ in range(6):
            expand_tree(tree, rng, RELOC, w, cfg)
        check_tree(tree, w)


def test_extract_controls_examples():
    t = chain_tree([1.0, 0.9, 0.8])
    assert extract_controls(t, 0) == []
    t.segment[1], t.segment[2] = "a", "b"
    assert extract_controls(t, 1) == ["a"]
    assert extract_controls(t, 2) == ["a", "b"]


# ---- progress evaluation

def test_progress_root_only():
    assert evaluate_progress(chain_tree([1.0]), 0.5, 3).controls == []


def test_progress_horizon():
    t = chain_tree([1.0, 0.4])
    t.segment[1] = "s"
    out = evaluate_progress(t, 0.5, 10)
    assert out.branch == HORIZON and out.node == 1 and out.controls == ["s"]


def test_progress_goal_precedes_others():
    t = chain_tree([1.0, 0.99], in_goal=[False, True])
    assert evaluate_progress(t, 0.5, 10).branch == GOAL


def test_progress_depth_picks_best_leaf():
    t = MotionTree(synthetic((0, 0, 0)), 1.0)
    a = t.add(0, synthetic((1, 0, 0)), None, 0.95, False)
    t.add(a, synthetic((2, 0, 0)), None, 0.9, False)
    t.add(0, synthetic((3, 0, 0)), None, 0.3, False)
    t.add(a, synthetic((4, 0, 0)), None, 0.7, False)
    out = evaluate_progress(t, 0.8, 2)
    assert out.branch == DEPTH and out.node == 3


def test_progress_exactly_p_is_not_progress():
    assert evaluate_progress(chain_tree([1.0, 0.5]), 0.5, 10).controls == []


def test_progress_exhaustive_small_trees():
    values = (0.2, 0.6, 1.0)
    for parents in [(0,), (0, 0), (0, 1), (0, 0, 1), (0, 1, 2), (0, 1, 1)]:
        for hs in itertools.product(values, repeat=len(parents) + 1):
            for last_goal in (False, True):
                t = MotionTree(synthetic((0, 0, 0)), hs[0])
                for k, par in enumerate(parents, 1):
                    t.add(par, synthetic((k, 0, 0)), f"s{k}", hs[k], last_goal and k == len(parents))
                for p, dmax in itertools.product((0.1, 0.5), (1, 2, 3, 4)):
                    out = evaluate_progress(t, p, dmax)
                    expect = last_goal or hs[0] - hs[-1] > p or max(t.depth) >= dmax
                    assert bool(out.controls) == expect
                    if out.controls:
                        assert out.controls == extract_controls(t, out.node)
                    if out.branch == DEPTH:
                        assert t.h[out.node] == min(t.h[i] for i in t.leaves())


# ---- clocks

def test_sim_clock_counts_work_and_pauses():
    w, s = one_cube()
    clock = SimClock(w)
    assert clock.elapsed() == 0.0
    w.step(s, Twist(0.1, 0, 0, 0.2))
    t = clock.elapsed()
    assert t == pytest.approx(20 * CostModel().per_substep, rel=0.2)
    with clock.pause():
        w.step(s, Twist(0.1, 0, 0, 0.2))
    assert clock.elapsed() == pytest.approx(t)
    clock.charge(1.0)
    assert clock.elapsed() == pytest.approx(t + 1.0)


def test_wall_clock_pause():
    import time
    c = WallClock()
    with c.pause():
        time.sleep(0.05)
    assert c.elapsed() < 0.04


# ---- full loops

def test_start_in_goal():
    w, s = one_cube((0.0, 0.32, 0.0))
    task = make_grasp_task(0, CUBE, ARM.gripper)
    assert task.goal(s, w)
    for fn in (plan_dhrrt, plan_kdrrt):
        out = fn(w, task, PlannerConfig(time_budget=1.0), PerfectExecutor(w, s))
        assert out.success and out.executed_controls == [] and out.nodes_added == 0


def test_invalid_start_fails():
    w, s = one_cube()
    bad = w.invalid(s)
    assert not plan_dhrrt(w, RELOC, PlannerConfig(time_budget=1.0), PerfectExecutor(w, bad)).success


def run(fn, seed, executor_factory, budget=20.0, **kw):
    w, s = one_cube()
    cfg = PlannerConfig(seed=seed, time_budget=budget, p=0.03, **kw)
    ex = executor_factory(World(ARM, [CUBE], WS), s)
    events = []
    out = fn(w, RELOC, cfg, ex, on_event=lambda name, **d: events.append((name, d)))
    return out, events, ex


def test_dhrrt_relocates_with_perfect_executor():
    out, events, ex = run(plan_dhrrt, 0, PerfectExecutor)
    assert out.success
    assert RELOC.goal(ex.observe(), None)
    assert out.planning_time <= 20.0
    names = [e[0] for e in events]
    assert names[-1] == "goal-reached"
    assert names.count("segment-emitted") == out.executions == out.replans + 1


def test_kdrrt_relocates_with_perfect_executor():
    for replanning in (False, True):
        w, s = one_cube()
        out = plan_kdrrt(w, RELOC, PlannerConfig(seed=0, time_budget=20.0), PerfectExecutor(World(ARM, [CUBE], WS), s),
                         replanning=replanning)
        assert out.success
        assert out.replans == 0


def test_horizon_segments_improve_by_p():
    for seed in range(3):
        out, _, _ = run(plan_dhrrt, seed, PerfectExecutor)
        for branch, h_root, h_node, h_new_root in out.horizon_log:
            assert h_new_root == h_node
            if branch == HORIZON:
                assert h_new_root < h_root - 0.03


def test_seed_determinism():
    a, ea, _ = run(plan_dhrrt, 4, PerfectExecutor)
    b, eb, _ = run(plan_dhrrt, 4, PerfectExecutor)
    assert ea == eb
    assert (a.success, a.nodes_added, a.replans, a.planning_time) == (b.success, b.nodes_added, b.replans, b.planning_time)
    assert a.final_state == b.final_state
    assert all(x == y for x, y in zip(a.executed_controls, b.executed_controls))


def perturbing(world, start):
    return SimExecutor(world, start, np.random.default_rng(1), perturb_interval=0.2, perturb_speed=0.1)


def test_dhrrt_replans_under_perturbation():
    out, _, ex = run(plan_dhrrt, 0, perturbing, budget=40.0)
    assert ex.perturbations >= 1
    assert out.replans >= 1
    assert out.success


def test_rkdrrt_replans_when_execution_misses():
    w, s = one_cube()
    ex = SimExecutor(World(ARM, [CUBE], WS), s, np.random.default_rng(1), perturb_interval=0.1, perturb_speed=0.4)
    out = plan_kdrrt(w, RELOC, PlannerConfig(seed=1, time_budget=40.0), ex, replanning=True)
    assert ex.perturbations >= 1
    assert out.executions >= 2
    assert out.replans == out.executions - 1


def test_emitted_controls_only_valid_transitions():
    out, _, _ = run(plan_dhrrt, 2, PerfectExecutor)
    w, s = one_cube()
    q = s
    for seg in out.executed_controls:
        q, ok, _ = w.apply_segment(q, seg)
        assert ok and q.valid
