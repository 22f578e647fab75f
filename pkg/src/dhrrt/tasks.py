"""Goal criteria and heuristics for grasping, relocating and sorting."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConvexPolygon, angle_diff, convex_hull, hull_distance, point_in_rect, wrap_angle
from .kinematics import Gripper
from .physics import SystemState, World

PARALLEL_TOL = 1e-6


def feasible_grasp_angles(shape: ConvexPolygon, gripper: Gripper) -> list[float]:
    """Body-frame gripper headings that clamp a pair of parallel edges.

    For every pair of antipodal parallel edges whose separation fits inside
    the finger gap, the two approach headings perpendicular to the edge
    normal are returned.  An empty list means the gripper cannot hold the
    shape.
    """
    v = shape.vertices
    n = len(v)
    dirs = [math.atan2(*(v[(i + 1) % n] - v[i])[::-1]) for i in range(n)]
    angles: list[float] = []
    for i, j in itertools.combinations(range(n), 2):
        if angle_diff(dirs[i], dirs[j] + math.pi) > PARALLEL_TOL:
            continue
        normal = dirs[i] - math.pi / 2.0
        width = shape.extent((math.cos(normal), math.sin(normal)))
        if width >= gripper.finger_gap:
            continue
        for a in (normal + math.pi / 2.0, normal - math.pi / 2.0):
            a = wrap_angle(a)
            if all(angle_diff(a, b) > 1e-9 for b in angles):
                angles.append(a)
    return angles


class Task:
    """Interface the planner uses: a goal test, a heuristic, and a focus point."""

    name = "task"
    control_duration = 0.2

    def goal(self, q: SystemState, world: World) -> bool:
        raise NotImplementedError

    def heuristic(self, q: SystemState, world: World) -> float:
        raise NotImplementedError

    def focus(self, q: SystemState) -> tuple[float, float]:
        raise NotImplementedError


@dataclass(frozen=True)
class GraspTask(Task):
    target_index: int
    feasible_angles: tuple[float, ...]
    finger_region: tuple[float, float] = Gripper().region_half_extents
    eps_alpha: float = 0.2
    w_d: float = 0.7
    w_alpha: float = 0.3

    name = "grasp"

    def __post_init__(self):
        if self.eps_alpha <= 0 or self.w_d <= 0 or self.w_alpha <= 0:
            raise ValueError("eps_alpha and weights must be positive")
        if not self.feasible_angles:
            raise ValueError("grasp target has no feasible grasp angle for this gripper")
        object.__setattr__(self, "feasible_angles", tuple(float(a) for a in self.feasible_angles))

    def goal(self, q, world=None):
        return grasp_goal(q, self)

    def heuristic(self, q, world=None):
        return grasp_heuristic(q, self)

    def focus(self, q):
        x, y, _ = q.objects[self.target_index]
        return float(x), float(y)


@dataclass(frozen=True)
class RelocateTask(Task):
    target_index: int
    goal_center: tuple[float, float]
    goal_radius: float = 0.1

    name = "relocate"

    def __post_init__(self):
        if self.goal_radius <= 0:
            raise ValueError("goal radius must be positive")

    def goal(self, q, world=None):
        return relocate_goal(q, self)

    def heuristic(self, q, world=None):
        return relocate_heuristic(q, self)

    def focus(self, q):
        return self.goal_center


@dataclass(frozen=True)
class SortTask(Task):
    class_of: tuple
    eps_d: float = 0.1
    lambda_sep: float = 1.0
    sep_cap: float = field(default=None)

    name = "sort"
    control_duration = 0.4

    def __post_init__(self):
        if self.eps_d <= 0:
            raise ValueError("eps_d must be positive")
        if self.sep_cap is None:
            object.__setattr__(self, "sep_cap", 3.0 * self.eps_d)
        object.__setattr__(self, "class_of", tuple(self.class_of))
        if len(self.labels) < 2:
            raise ValueError("sorting needs at least two classes")

    @property
    def labels(self) -> list:
        return sorted(set(self.class_of), key=str)

    def members(self, label) -> list[int]:
        return [i for i, c in enumerate(self.class_of) if c == label]

    def goal(self, q, world):
        return sort_goal(q, self, world)

    def heuristic(self, q, world):
        return sort_heuristic(q, self, world)

    def focus(self, q):
        c = q.objects[:, :2].mean(axis=0)
        return float(c[0]), float(c[1])


# --------------------------------------------------------------------------
# grasping


def grasp_goal(q: SystemState, task: GraspTask) -> bool:
    if not q.valid:
        return False
    x, y, th = q.objects[task.target_index]
    g = q.gripper
    if not point_in_rect(x, y, g, *task.finger_region):
        return False
    return min(angle_diff(g.theta, a + th) for a in task.feasible_angles) <= task.eps_alpha


def grasp_heuristic(q: SystemState, task: GraspTask) -> float:
    x, y, _ = q.objects[task.target_index]
    g = q.gripper
    bearing = math.atan2(y - g.y, x - g.x)  # atan2(0, 0) == 0
    return task.w_d * math.hypot(g.x - x, g.y - y) + task.w_alpha * angle_diff(g.theta, bearing)


# --------------------------------------------------------------------------
# relocating


def relocate_goal(q: SystemState, task: RelocateTask) -> bool:
    if not q.valid:
        return False
    x, y, _ = q.objects[task.target_index]
    return math.hypot(x - task.goal_center[0], y - task.goal_center[1]) <= task.goal_radius


def relocate_heuristic(q: SystemState, task: RelocateTask) -> float:
    x, y, _ = q.objects[task.target_index]
    g = q.gripper
    return math.hypot(x - g.x, y - g.y) + math.hypot(x - task.goal_center[0], y - task.goal_center[1])


# --------------------------------------------------------------------------
# sorting


def class_hulls(q: SystemState, task: SortTask, world: World) -> list[np.ndarray]:
    """Convex hull of every object's vertices, one per class."""
    hulls = []
    for label in task.labels:
        pts = np.concatenate([world.object_world(q, i) for i in task.members(label)])
        hulls.append(convex_hull(pts))
    return hulls


def _hull_gaps(q, task, world) -> list[float]:
    hulls = class_hulls(q, task, world)
    return [hull_distance(a, b) for a, b in itertools.combinations(hulls, 2)]


def sort_goal(q: SystemState, task: SortTask, world: World) -> bool:
    if not q.valid:
        return False
    return min(_hull_gaps(q, task, world)) > task.eps_d


def _mean_pairwise(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    d = [math.dist(a, b) for a, b in itertools.combinations(points.tolist(), 2)]
    return sum(d) / len(d)


def sort_heuristic(q: SystemState, task: SortTask, world: World) -> float:
    """Within-class spread minus capped between-class hull separation."""
    spread = sum(_mean_pairwise(q.objects[task.members(c), :2]) for c in task.labels)
    sep = sum(min(gap, task.sep_cap) for gap in _hull_gaps(q, task, world))
    return spread - task.lambda_sep * sep


def make_grasp_task(target_index: int, shape: ConvexPolygon, gripper: Gripper, **kw) -> GraspTask:
    return GraspTask(target_index, tuple(feasible_grasp_angles(shape, gripper)),
                     finger_region=gripper.region_half_extents, **kw)
