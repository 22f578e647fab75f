import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from dhrrt.geometry import ConvexPolygon, Pose2, angle_diff
from dhrrt.kinematics import ArmModel, Gripper
from dhrrt.physics import SystemState, Workspace, World
from dhrrt.tasks import (
    GraspTask, RelocateTask, SortTask, class_hulls, feasible_grasp_angles, grasp_goal, grasp_heuristic,
    make_grasp_task, relocate_goal, relocate_heuristic, sort_goal, sort_heuristic,
)

ARM = ArmModel(Pose2(0, 0, math.pi / 2), (0.4, 0.35, 0.25, 0.12), ((-2.9, 2.9),) * 4)
CUBE = ConvexPolygon.box(0.05, 0.05)
SQUARE_ANGLES = (0.0, math.pi / 2, math.pi, -math.pi / 2)


def state(gripper, objects, valid=True):
    return SystemState(np.zeros(4), np.array(objects, dtype=float).reshape(-1, 3), valid, Pose2(*gripper))


def sort_world(n):
    return World(ARM, [CUBE] * n, Workspace(-5, 5, -5, 5))


def angle_set(angles):
    return sorted(round(math.remainder(a, 2 * math.pi), 9) % round(2 * math.pi, 9) for a in angles)


# ---- feasible grasp angles

def test_square_has_four_angles():
    got = feasible_grasp_angles(ConvexPolygon.box(1, 1), Gripper(finger_gap=2.0))
    assert len(got) == 4
    assert angle_set(got) == angle_set(SQUARE_ANGLES)


def test_hexagon_has_six_angles():
    hexagon = ConvexPolygon.regular(6, 0.02)
    got = feasible_grasp_angles(hexagon, Gripper())
    assert len(got) == 6
    for a, b in itertools.combinations(got, 2):
        assert angle_diff(a, b) > 0.5


def test_long_rectangle_two_angles():
    got = feasible_grasp_angles(ConvexPolygon.box(0.2, 0.04), Gripper(finger_gap=0.08))
    # Only the 4 cm sides fit; the fingers close along y, so the tool points along +-x.
    assert angle_set(got) == angle_set((0.0, math.pi))


def test_too_wide_is_ungraspable():
    assert feasible_grasp_angles(ConvexPolygon.box(0.1, 0.1), Gripper(finger_gap=0.08)) == []
    with pytest.raises(ValueError):
        make_grasp_task(0, ConvexPolygon.box(0.1, 0.1), Gripper())


def test_triangle_has_no_parallel_edges():
    assert feasible_grasp_angles(ConvexPolygon.regular(3, 0.02), Gripper()) == []


# ---- grasp

GRASP = GraspTask(0, SQUARE_ANGLES)


def test_grasp_centered_exact_angle():
    assert grasp_goal(state((0, 0, math.pi / 2), [(0, 0, 0)]), GRASP)


@pytest.mark.parametrize("err,expected", [(0.19, True), (0.21, False), (-0.19, True), (-0.21, False)])
def test_grasp_angle_tolerance(err, expected):
    assert grasp_goal(state((0, 0, math.pi / 2 + err), [(0, 0, 0)]), GRASP) is expected


def test_grasp_far_target():
    assert not grasp_goal(state((0, 0, 0), [(1, 0, 0)]), GRASP)


def test_grasp_uses_object_rotation():
    # A cube turned by 0.5 rad needs the tool turned by the same amount.
    assert not grasp_goal(state((0, 0, 0), [(0, 0, 0.5)]), GRASP)
    assert grasp_goal(state((0, 0, 0.5), [(0, 0, 0.5)]), GRASP)


def test_grasp_finger_region_edges():
    hx, hy = Gripper().region_half_extents
    assert grasp_goal(state((0, 0, 0), [(hx * 0.99, hy * 0.99, 0)]), GRASP)
    assert not grasp_goal(state((0, 0, 0), [(hx * 1.01, 0, 0)]), GRASP)
    assert not grasp_goal(state((0, 0, 0), [(0, hy * 1.01, 0)]), GRASP)


def test_grasp_invalid_state_is_not_goal():
    assert not grasp_goal(state((0, 0, 0), [(0, 0, 0)], valid=False), GRASP)


def test_grasp_heuristic_examples():
    assert grasp_heuristic(state((0, 0, 0), [(1, 0, 0)]), GRASP) == pytest.approx(0.7)
    assert grasp_heuristic(state((0, 0, 0), [(0, 0, 0)]), GRASP) == 0.0
    assert grasp_heuristic(state((0, 0, math.pi / 2), [(0, 1, 0)]), GRASP) == pytest.approx(0.7)
    assert grasp_heuristic(state((0, 0, math.pi), [(1, 0, 0)]), GRASP) == pytest.approx(0.7 + 0.3 * math.pi)


@settings(max_examples=200)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-4, 4), st.floats(-2, 2), st.floats(-2, 2), st.floats(-4, 4))
def test_grasp_properties(gx, gy, gth, ox, oy, oth):
    q = state((gx, gy, gth), [(ox, oy, oth)])
    h = grasp_heuristic(q, GRASP)
    assert math.isfinite(h) and h >= 0.0
    if h == 0.0:
        assert math.hypot(gx - ox, gy - oy) == 0.0
    # Adding 2*pi rounds the wrapped heading by ~1e-16, which can flip a heading sitting exactly on eps_alpha.
    err = min(angle_diff(gth, a + oth) for a in GRASP.feasible_angles)
    assume(abs(err - GRASP.eps_alpha) > 1e-9)
    q2 = state((gx, gy, gth + 2 * math.pi), [(ox, oy, oth)])
    assert grasp_goal(q, GRASP) == grasp_goal(q2, GRASP)


# ---- relocate

RELOC = RelocateTask(0, (0.0, 0.0), 0.1)


@pytest.mark.parametrize("d,expected", [(0.0, True), (0.099, True), (0.1, True), (0.11, False)])
def test_relocate_goal(d, expected):
    assert relocate_goal(state((1, 1, 0), [(d, 0, 0)]), RELOC) is expected


def test_relocate_heuristic_examples():
    assert relocate_heuristic(state((0, 0, 0), [(0, 0, 0)]), RELOC) == 0.0
    assert relocate_heuristic(state((0, 0, 0), [(3, 4, 0)]), RelocateTask(0, (3, 4))) == pytest.approx(5.0)
    assert relocate_heuristic(state((0, 0, 0), [(1, 0, 0)]), RelocateTask(0, (2, 0))) == pytest.approx(2.0)


@settings(max_examples=200)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_relocate_properties(gx, gy, ox, oy):
    q = state((gx, gy, 0), [(ox, oy, 0)])
    h = relocate_heuristic(q, RELOC)
    assert math.isfinite(h) and h >= 0.0
    if relocate_goal(q, RELOC):
        assert math.hypot(ox, oy) <= RELOC.goal_radius


def test_task_validation():
    with pytest.raises(ValueError):
        RelocateTask(0, (0, 0), 0.0)
    with pytest.raises(ValueError):
        GraspTask(0, SQUARE_ANGLES, eps_alpha=0.0)
    with pytest.raises(ValueError):
        SortTask(("a", "a"))
    with pytest.raises(ValueError):
        SortTask(("a", "b"), eps_d=0)


# ---- sort

def two_class(gap, n=2):
    """Class a stacked on x <= 0, class b starting ``gap`` to the right."""
    objs = [(-0.025 - 0.05 * k, 0, 0) for k in range(n)] + [(gap + 0.025 + 0.05 * k, 0, 0) for k in range(n)]
    return state((0, -3, 0), objs), SortTask(("a",) * n + ("b",) * n, eps_d=0.1), sort_world(2 * n)


def test_sort_separated():
    q, task, w = two_class(0.15)
    assert sort_goal(q, task, w)


def test_sort_overlapping_hulls():
    q = state((0, -3, 0), [(0, 0, 0), (0.3, 0, 0), (0.15, 0, 0), (0.15, 0.3, 0)])
    task, w = SortTask(("a", "a", "b", "b"), eps_d=0.1), sort_world(4)
    assert not sort_goal(q, task, w)


def test_sort_boundary_strict():
    q, task, w = two_class(0.1)
    assert not sort_goal(q, task, w)
    q, task, w = two_class(0.1 + 1e-9)
    assert sort_goal(q, task, w)


def test_class_hulls_use_vertices():
    q, task, w = two_class(0.15)
    a, b = class_hulls(q, task, w)
    assert a[:, 0].max() == pytest.approx(0.0)
    assert b[:, 0].min() == pytest.approx(0.15)


def test_sort_heuristic_minimum():
    task = SortTask(("a", "a", "b", "b", "c", "c"), eps_d=0.1)
    w = sort_world(6)
    q = state((0, -3, 0), [(0, 0, 0), (0, 0, 0), (2, 0, 0), (2, 0, 0), (0, 2, 0), (0, 2, 0)])
    assert sort_heuristic(q, task, w) == pytest.approx(-task.lambda_sep * task.sep_cap * 3)


def test_sort_heuristic_label_swap_within_class():
    q, task, w = two_class(0.2, n=3)
    objs = q.objects.copy()
    objs[[0, 2]] = objs[[2, 0]]
    q2 = state((0, -3, 0), objs)
    assert sort_heuristic(q2, task, w) == sort_heuristic(q, task, w)


def test_sort_heuristic_monotone_toward_class_centroid():
    task = SortTask(("a", "a", "a", "b", "b", "b"), eps_d=0.1)
    w = sort_world(6)
    a = [(-1.0, 0.0), (-1.2, 0.3), (-0.9, -0.25)]
    b = [(1.0, 0.0), (1.1, 0.2), (0.8, -0.3)]
    objs = np.array([(*p, 0.0) for p in a + b])
    prev = sort_heuristic(state((0, -3, 0), objs), task, w)
    centroid = objs[:3, :2].mean(axis=0)
    for _ in range(5):
        objs[1, :2] += 0.2 * (centroid - objs[1, :2])
        cur = sort_heuristic(state((0, -3, 0), objs), task, w)
        assert cur < prev
        prev = cur


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.permutations(range(3)))
def test_sort_goal_invariances(dx, dy, perm):
    q, task, w = two_class(0.12, n=3)
    base = sort_goal(q, task, w)
    objs = q.objects.copy()
    objs[:3] = objs[list(perm)]
    assert sort_goal(state((0, -3, 0), objs), task, w) == base
    objs[:, 0] += dx
    objs[:, 1] += dy
    assert sort_goal(state((0, -3, 0), objs), task, w) == base


def test_sort_heuristic_finite_on_random_states():
    rng = np.random.default_rng(0)
    task = SortTask(("a", "b") * 3)
    w = sort_world(6)
    for _ in range(50):
        objs = np.column_stack([rng.uniform(-1, 1, (6, 2)), rng.uniform(-3, 3, 6)])
        assert math.isfinite(sort_heuristic(state((0, 0, 0), objs), task, w))
