"""Kinodynamic RRT search with dynamic planning horizons.

``plan_dhrrt`` interleaves tree growth with execution: as soon as a new node
reaches the goal, improves the heuristic over the root by more than ``p``, or
the tree hits ``D_max`` levels, the controls leading there are executed, the
resulting state is observed, and a fresh tree is rooted at it.
``plan_kdrrt`` is the goal-only baseline, optionally replanning after an
open-loop execution misses.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from .geometry import Pose2, angle_diff
from .kinematics import ControlSegment, Twist, jacobian_projection
from .physics import SystemState, World
from .tasks import Task

EventSink = Callable[..., None]


@dataclass(frozen=True)
class DistanceWeights:
    robot: float = 1.0
    objects: float = 0.5
    angular_scale: float = 0.1


@dataclass(frozen=True)
class PlannerConfig:
    M: int = 10
    p: float = 0.1
    D_max: int = 10
    time_budget: float = 60.0
    max_linear: float = 0.2
    max_angular: float = 1.0
    duration: float = 0.2
    weights: DistanceWeights = DistanceWeights()
    goal_bias: float = 0.0
    bias_radius: float = 0.1
    seed: int = 0
    clock: str = "sim"

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.p <= 0:
            raise ValueError("progress threshold p must be positive")
        if self.D_max < 1:
            raise ValueError("D_max must be >= 1")
        if self.time_budget <= 0:
            raise ValueError("time budget must be positive")
        if not 0.0 <= self.goal_bias < 1.0:
            raise ValueError("goal_bias must lie in [0, 1)")
        if self.max_linear < 0 or self.max_angular < 0 or self.duration <= 0:
            raise ValueError("invalid control bounds")
        if self.clock not in ("sim", "wall"):
            raise ValueError("clock must be 'sim' or 'wall'")


# --------------------------------------------------------------------------
# planning clocks


@dataclass(frozen=True)
class CostModel:
    """Seconds charged per unit of simulation work by the simulated clock.

    The constants put a cube-clutter grasping expansion (ten 0.2 s rollouts)
    at roughly 40 ms.  A narrow-phase test is charged in proportion to the
    combined vertex count of the tested pair, as for a support-mapping
    collision routine.
    """

    per_substep: float = 1.7e-4
    per_sat_unit: float = 3e-7
    per_broad_check: float = 1e-7
    per_nn_node: float = 2e-7
    per_heuristic: float = 2e-4


class SimClock:
    """Deterministic planning clock driven by counted work in the planner's world."""

    def __init__(self, world: World, cost: CostModel = CostModel()):
        self.world = world
        self.cost = cost
        self.extra = 0.0
        self._start = world.work.snapshot()

    def charge(self, seconds: float) -> None:
        self.extra += seconds

    def discount(self, seconds: float) -> None:
        self.extra -= seconds

    def elapsed(self) -> float:
        s0, u0, b0 = self._start
        s1, u1, b1 = self.world.work.snapshot()
        c = self.cost
        return (s1 - s0) * c.per_substep + (u1 - u0) * c.per_sat_unit + (b1 - b0) * c.per_broad_check + self.extra

    def pause(self):
        # Work done by an executor sharing this world is not planning time.
        return _Pause(self)


class WallClock:
    """Monotonic clock that excludes paused sections (robot execution)."""

    def __init__(self, world: World = None, cost: CostModel = CostModel()):
        self.cost = cost
        self._t0 = time.monotonic()
        self._paused = 0.0

    def charge(self, seconds: float) -> None:
        pass

    def discount(self, seconds: float) -> None:
        self._paused += seconds

    def elapsed(self) -> float:
        return time.monotonic() - self._t0 - self._paused

    def pause(self):
        return _Pause(self)


class _Pause:
    def __init__(self, clock):
        self.clock = clock

    def __enter__(self):
        self.t = self.clock.elapsed()

    def __exit__(self, *exc):
        self.clock.discount(self.clock.elapsed() - self.t)
        return False


def make_clock(cfg: PlannerConfig, world: World):
    return SimClock(world) if cfg.clock == "sim" else WallClock(world)


# --------------------------------------------------------------------------
# motion tree


class MotionTree:
    """Rooted tree of states; each non-root node has one inward control segment."""

    def __init__(self, root: SystemState, h_root: float, in_goal: bool = False,
                 weights: DistanceWeights = DistanceWeights()):
        self.weights = weights
        self.states: list[SystemState] = [root]
        self.h: list[float] = [float(h_root)]
        self.in_goal: list[bool] = [bool(in_goal)]
        self.parent: list[int] = [-1]
        self.depth: list[int] = [0]
        self.segment: list[Optional[ControlSegment]] = [None]
        self.n_children: list[int] = [0]
        self.max_depth = 0
        n = root.n_objects
        self._feat = np.empty((64, 3 + 2 * n))
        self._feat[0] = _features(root)

    root = 0

    def __len__(self) -> int:
        return len(self.states)

    @property
    def latest(self) -> int:
        return len(self.states) - 1

    def add(self, parent: int, state: SystemState, segment: ControlSegment, h: float, in_goal: bool) -> int:
        nid = len(self.states)
        if nid == len(self._feat):
            self._feat = np.concatenate([self._feat, np.empty_like(self._feat)])
        self._feat[nid] = _features(state)
        self.states.append(state)
        self.h.append(float(h))
        self.in_goal.append(bool(in_goal))
        self.parent.append(parent)
        d = self.depth[parent] + 1
        self.depth.append(d)
        self.segment.append(segment)
        self.n_children.append(0)
        self.n_children[parent] += 1
        self.max_depth = max(self.max_depth, d)
        return nid

    def leaves(self) -> list[int]:
        return [i for i, c in enumerate(self.n_children) if c == 0]

    def path(self, node: int) -> list[int]:
        out = []
        while node != -1:
            out.append(node)
            node = self.parent[node]
        return out[::-1]

    def features(self) -> np.ndarray:
        return self._feat[: len(self.states)]


def _features(q: SystemState) -> np.ndarray:
    g = q.gripper
    return np.concatenate(([g.x, g.y, g.theta], q.objects[:, :2].ravel()))


def state_distance(q1: SystemState, q2: SystemState, weights: DistanceWeights = DistanceWeights()) -> float:
    """Weighted gripper pose distance plus summed object position distances."""
    if q1.n_objects != q2.n_objects:
        raise ValueError("states have different numbers of objects")
    g1, g2 = q1.gripper, q2.gripper
    robot = math.hypot(g1.x - g2.x, g1.y - g2.y) + weights.angular_scale * angle_diff(g1.theta, g2.theta)
    d = q1.objects[:, :2] - q2.objects[:, :2]
    objects = float(np.sqrt((d * d).sum(axis=1)).sum())
    return weights.robot * robot + weights.objects * objects


def nearest(tree: MotionTree, q_rand: SystemState, weights: Optional[DistanceWeights] = None) -> int:
    """Node minimizing :func:`state_distance` to ``q_rand`` (lowest id on ties)."""
    w = weights or tree.weights
    F = tree.features()
    r = _features(q_rand)
    dxy = np.hypot(F[:, 0] - r[0], F[:, 1] - r[1])
    dth = np.abs(np.remainder(F[:, 2] - r[2] + math.pi, 2 * math.pi) - math.pi)
    obj = np.sqrt(((F[:, 3:] - r[3:]) ** 2).reshape(len(F), -1, 2).sum(axis=2)).sum(axis=1)
    cost = w.robot * (dxy + w.angular_scale * dth) + w.objects * obj
    return int(np.argmin(cost))


def extract_controls(tree: MotionTree, node: int) -> list[ControlSegment]:
    return [tree.segment[i] for i in tree.path(node)[1:]]


# --------------------------------------------------------------------------
# sampling


def sample_state(rng: np.random.Generator, world: World, cfg: PlannerConfig,
                 focus: Optional[tuple[float, float]] = None) -> SystemState:
    """Steering target: uniform gripper pose and object poses over the workspace."""
    ws = world.workspace
    if cfg.goal_bias > 0.0 and focus is not None and rng.random() < cfg.goal_bias:
        r = cfg.bias_radius * math.sqrt(rng.random())
        a = rng.uniform(-math.pi, math.pi)
        gx, gy = focus[0] + r * math.cos(a), focus[1] + r * math.sin(a)
    else:
        gx, gy = rng.uniform(ws.xmin, ws.xmax), rng.uniform(ws.ymin, ws.ymax)
    gth = rng.uniform(-math.pi, math.pi)
    n = world.n_objects
    objs = np.column_stack([
        rng.uniform(ws.xmin, ws.xmax, n),
        rng.uniform(ws.ymin, ws.ymax, n),
        rng.uniform(-math.pi, math.pi, n),
    ])
    return SystemState(np.zeros(0), objs, False, Pose2(gx, gy, gth))


def sample_control(rng: np.random.Generator, cfg: PlannerConfig) -> Twist:
    vx, vy = rng.uniform(-cfg.max_linear, cfg.max_linear, 2)
    om = rng.uniform(-cfg.max_angular, cfg.max_angular)
    return Twist(float(vx), float(vy), float(om), cfg.duration)


# --------------------------------------------------------------------------
# expansion and progress


def expand_tree(tree: MotionTree, rng: np.random.Generator, task: Task, world: World,
                cfg: PlannerConfig, clock=None) -> Optional[int]:
    """One expansion attempt; returns the new node id or None when fruitless."""
    focus = task.focus(tree.states[tree.root]) if cfg.goal_bias > 0 else None
    q_rand = sample_state(rng, world, cfg, focus)
    near = nearest(tree, q_rand, cfg.weights)
    if clock is not None:
        clock.charge(len(tree) * clock.cost.per_nn_node)
    q_near = tree.states[near]

    best = None
    for i in range(cfg.M):
        v = sample_control(rng, cfg)
        q_i, _ = world.step_with_segment(q_near, v)
        if not q_i.valid:
            continue
        d = state_distance(q_i, q_rand, cfg.weights)
        if best is None or d < best[0]:
            best = (d, q_i, v)
    if best is None:
        return None
    _, q_new, v_star = best
    u_star = jacobian_projection(world.arm, q_near.joints, v_star, world.cfg.substep, world.obstacles)
    if u_star is None:
        return None
    if clock is not None:
        clock.charge(clock.cost.per_heuristic)
    return tree.add(near, q_new, u_star, task.heuristic(q_new, world), task.goal(q_new, world))


GOAL, HORIZON, DEPTH = "goal", "horizon", "depth"


@dataclass
class Progress:
    controls: list = field(default_factory=list)
    branch: Optional[str] = None
    node: Optional[int] = None


def evaluate_progress(tree: MotionTree, p: float, D_max: int) -> Progress:
    """Decide whether the tree holds a segment worth executing now."""
    q_new = tree.latest
    if tree.in_goal[q_new]:
        return Progress(extract_controls(tree, q_new), GOAL, q_new)
    if tree.h[q_new] < tree.h[tree.root] - p:
        return Progress(extract_controls(tree, q_new), HORIZON, q_new)
    if tree.max_depth >= D_max:
        leaves = tree.leaves()
        best = min(leaves, key=lambda i: (tree.h[i], i))
        return Progress(extract_controls(tree, best), DEPTH, best)
    return Progress()


# --------------------------------------------------------------------------
# planning-execution loops


class Executor(Protocol):
    def observe(self) -> SystemState: ...

    def execute(self, controls: list) -> SystemState: ...


@dataclass
class PlanOutcome:
    success: bool
    executed_controls: list
    planning_time: float
    nodes_added: int
    replans: int
    final_state: SystemState
    expansions: int = 0
    executions: int = 0
    horizon_log: list = field(default_factory=list)


def observe_in_model(world: World, observed: SystemState) -> SystemState:
    """Express an observed state in the planner's own model of the scene."""
    if not observed.valid:
        return world.invalid(world.make_state(observed.joints, observed.objects))
    q = world.make_state(observed.joints, observed.objects)
    if q.valid:
        return q
    return world.settle(q)


def _root(task: Task, world: World, q: SystemState, weights: DistanceWeights) -> MotionTree:
    return MotionTree(q, task.heuristic(q, world), task.goal(q, world), weights)


def _emit(sink: Optional[EventSink], name: str, **data) -> None:
    if sink is not None:
        sink(name, **data)


def plan_dhrrt(world: World, task: Task, cfg: PlannerConfig, executor: Executor,
               on_event: Optional[EventSink] = None) -> PlanOutcome:
    rng = np.random.default_rng(cfg.seed)
    clock = make_clock(cfg, world)
    q = observe_in_model(world, executor.observe())
    out = PlanOutcome(False, [], 0.0, 0, 0, q)
    if not q.valid:
        return out
    if task.goal(q, world):
        out.success = True
        _emit(on_event, "goal-reached", executed=0)
        return out

    tree = _root(task, world, q, cfg.weights)
    while clock.elapsed() < cfg.time_budget:
        out.expansions += 1
        nid = expand_tree(tree, rng, task, world, cfg, clock)
        if nid is None:
            continue
        out.nodes_added += 1
        _emit(on_event, "node-added", node=nid, depth=tree.depth[nid], h=tree.h[nid])
        prog = evaluate_progress(tree, cfg.p, cfg.D_max)
        if not prog.controls:
            continue
        out.planning_time = clock.elapsed()
        _emit(on_event, "segment-emitted", branch=prog.branch, length=len(prog.controls),
              h_root=tree.h[tree.root], h_node=tree.h[prog.node])
        with clock.pause():
            observed = executor.execute(prog.controls)
        out.executions += 1
        out.executed_controls.extend(prog.controls)
        q = observe_in_model(world, observed)
        out.final_state = q
        if not q.valid:
            break
        if task.goal(q, world):
            out.success = True
            out.horizon_log.append((prog.branch, tree.h[tree.root], tree.h[prog.node], tree.h[prog.node]))
            _emit(on_event, "goal-reached", executed=len(out.executed_controls))
            break
        new_tree = _root(task, world, q, cfg.weights)
        out.horizon_log.append((prog.branch, tree.h[tree.root], tree.h[prog.node], new_tree.h[0]))
        tree = new_tree
        out.replans += 1
        _emit(on_event, "replanned", h_root=tree.h[0])
    out.planning_time = clock.elapsed()
    return out


def plan_kdrrt(world: World, task: Task, cfg: PlannerConfig, executor: Executor, replanning: bool = False,
               on_event: Optional[EventSink] = None) -> PlanOutcome:
    rng = np.random.default_rng(cfg.seed)
    clock = make_clock(cfg, world)
    q = observe_in_model(world, executor.observe())
    out = PlanOutcome(False, [], 0.0, 0, 0, q)
    if not q.valid:
        return out
    if task.goal(q, world):
        out.success = True
        _emit(on_event, "goal-reached", executed=0)
        return out

    while clock.elapsed() < cfg.time_budget:
        tree = _root(task, world, q, cfg.weights)
        found = None
        while clock.elapsed() < cfg.time_budget:
            out.expansions += 1
            nid = expand_tree(tree, rng, task, world, cfg, clock)
            if nid is None:
                continue
            out.nodes_added += 1
            _emit(on_event, "node-added", node=nid, depth=tree.depth[nid], h=tree.h[nid])
            if tree.in_goal[nid]:
                found = nid
                break
        if found is None:
            break
        controls = extract_controls(tree, found)
        out.planning_time = clock.elapsed()
        _emit(on_event, "segment-emitted", branch=GOAL, length=len(controls),
              h_root=tree.h[tree.root], h_node=tree.h[found])
        with clock.pause():
            observed = executor.execute(controls)
        out.executions += 1
        out.executed_controls.extend(controls)
        q = observe_in_model(world, observed)
        out.final_state = q
        if not q.valid:
            break
        if task.goal(q, world):
            out.success = True
            _emit(on_event, "goal-reached", executed=len(out.executed_controls))
            break
        if not replanning:
            break
        out.replans += 1
        _emit(on_event, "replanned", h_root=task.heuristic(q, world))
    out.planning_time = clock.elapsed()
    return out
