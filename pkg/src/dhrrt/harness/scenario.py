"""Scenario files: a YAML document describing one rearrangement problem.

Grammar (all lengths in meters, angles in radians)::

    name: grasp_n10                      # optional label
    workspace: [xmin, xmax, ymin, ymax]
    arm:
      base: [x, y, theta]
      link_lengths: [l1, ..., lr]         # r >= 3
      joint_limits: [[lo, hi], ...]       # one pair per joint
      joints: [q1, ..., qr]               # start configuration
      manipulability_threshold: 0.001     # optional
      link_width: 0.04                    # optional
    gripper: {finger_gap, finger_depth, finger_width, palm_depth}   # optional
    physics: {substep, max_resolution_iters, rotation_coupling, contact_tolerance}  # optional
    shapes:                               # named convex shapes, centered on their centroid
      cube: {box: [w, h]}
      disc: {regular: [n, radius]}        # optional third entry: phase
      blob: {points: [[x, y], ...]}       # convex hull of the points
    obstacles:
      - {shape: wall, pose: [x, y, theta]}
    objects:
      - {shape: cube, pose: [x, y, theta], label: blue}   # label optional except for sorting
    task:
      kind: grasp | relocate | sort
      target: 0                           # grasp / relocate
      eps_alpha: 0.2                      # grasp, optional (also w_d, w_alpha)
      goal_center: [x, y]                 # relocate
      goal_radius: 0.1                    # relocate, optional
      eps_d: 0.1                          # sort, optional (also lambda_sep, sep_cap)
    planner_model:                        # optional: shapes only the planner sees
      shapes: {...}                       # same syntax as the top-level shapes
      objects: [cube, cube, ...]          # one shape name per object
    planner: {p: 0.1, D_max: 10, M: 10, duration: 0.2}     # optional defaults
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..geometry import ConvexPolygon, Pose2, PosedPolygon, simplify
from ..kinematics import ArmModel, Gripper
from ..physics import PhysicsConfig, SystemState, World, Workspace
from ..tasks import GraspTask, RelocateTask, SortTask, Task, make_grasp_task


class ScenarioError(ValueError):
    """Raised for unreadable or invalid scenario files."""


# Coarse shapes (boxes, triangles) are already at model resolution and are
# never reduced; only high-resolution outlines are.
MIN_REDUCIBLE_VERTICES = 8

PLANNER_KEYS = ("p", "D_max", "M", "duration", "max_linear", "max_angular", "goal_bias")


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    pose: Pose2
    label: Optional[str] = None


@dataclass(frozen=True)
class ObstacleSpec:
    shape: str
    pose: Pose2


@dataclass
class Scenario:
    workspace: Workspace
    arm: ArmModel
    joints: tuple[float, ...]
    shape_specs: dict[str, dict]
    objects: list[ObjectSpec]
    obstacles: list[ObstacleSpec]
    task_spec: dict[str, Any]
    physics: PhysicsConfig = PhysicsConfig()
    planner_model: Optional[dict] = None
    planner_defaults: dict = field(default_factory=dict)
    name: str = "scenario"

    def __post_init__(self):
        self._shapes = {k: build_shape(v, f"shapes.{k}") for k, v in self.shape_specs.items()}
        self._planner_shapes = None
        if self.planner_model is not None:
            specs = self.planner_model.get("shapes", {})
            lib = {**self._shapes, **{k: build_shape(v, f"planner_model.shapes.{k}") for k, v in specs.items()}}
            names = self.planner_model.get("objects")
            if not isinstance(names, list) or len(names) != len(self.objects):
                raise ScenarioError("planner_model.objects: need one shape name per object")
            for i, nm in enumerate(names):
                if nm not in lib:
                    raise ScenarioError(f"planner_model.objects[{i}]: unknown shape {nm!r}")
            self._planner_shapes = [lib[nm] for nm in names]

    def __eq__(self, other) -> bool:
        return isinstance(other, Scenario) and self.to_dict() == other.to_dict()

    # ---- derived models

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def true_shapes(self) -> list[ConvexPolygon]:
        return [self._shapes[o.shape] for o in self.objects]

    def planner_shapes(self, reduce_rate: Optional[float] = None) -> list[ConvexPolygon]:
        base = self._planner_shapes if self._planner_shapes is not None else self.true_shapes()
        if reduce_rate is None or reduce_rate >= 1.0:
            return list(base)
        cache: dict[int, ConvexPolygon] = {}
        out = []
        for s in base:
            if len(s) <= MIN_REDUCIBLE_VERTICES:
                out.append(s)
                continue
            if id(s) not in cache:
                cache[id(s)] = simplify(s, reduce_rate)
            out.append(cache[id(s)])
        return out

    def obstacle_polygons(self) -> list[PosedPolygon]:
        return [PosedPolygon(self._shapes[o.shape], o.pose) for o in self.obstacles]

    def world(self, shapes=None) -> World:
        return World(self.arm, shapes if shapes is not None else self.true_shapes(), self.workspace,
                     self.obstacle_polygons(), self.physics)

    def planner_world(self, reduce_rate: Optional[float] = None) -> World:
        return self.world(self.planner_shapes(reduce_rate))

    def start_state(self, world: Optional[World] = None) -> SystemState:
        w = world or self.world()
        return w.make_state(self.joints, [o.pose for o in self.objects])

    @property
    def labels(self) -> list[Optional[str]]:
        return [o.label for o in self.objects]

    def task(self) -> Task:
        t = dict(self.task_spec)
        kind = t.pop("kind")
        if kind == "grasp":
            idx = t.pop("target")
            return make_grasp_task(idx, self._shapes[self.objects[idx].shape], self.arm.gripper, **t)
        if kind == "relocate":
            return RelocateTask(t.pop("target"), tuple(t.pop("goal_center")), **t)
        if kind == "sort":
            return SortTask(tuple(self.labels), **t)
        raise ScenarioError(f"task.kind: unknown task {kind!r}")

    @property
    def target_index(self) -> Optional[int]:
        return self.task_spec.get("target")

    # ---- serialization

    def to_dict(self) -> dict:
        g = self.arm.gripper
        d: dict[str, Any] = {
            "name": self.name,
            "workspace": [self.workspace.xmin, self.workspace.xmax, self.workspace.ymin, self.workspace.ymax],
            "arm": {
                "base": _pose_list(self.arm.base_pose),
                "link_lengths": list(self.arm.link_lengths),
                "joint_limits": [list(p) for p in self.arm.joint_limits],
                "joints": list(self.joints),
                "manipulability_threshold": self.arm.manipulability_threshold,
                "link_width": self.arm.link_width,
            },
            "gripper": {"finger_gap": g.finger_gap, "finger_depth": g.finger_depth,
                        "finger_width": g.finger_width, "palm_depth": g.palm_depth},
            "physics": {"substep": self.physics.substep,
                        "max_resolution_iters": self.physics.max_resolution_iters,
                        "rotation_coupling": self.physics.rotation_coupling,
                        "contact_tolerance": self.physics.contact_tolerance},
            "shapes": {k: dict(v) for k, v in self.shape_specs.items()},
            "obstacles": [{"shape": o.shape, "pose": _pose_list(o.pose)} for o in self.obstacles],
            "objects": [
                {"shape": o.shape, "pose": _pose_list(o.pose), **({"label": o.label} if o.label is not None else {})}
                for o in self.objects
            ],
            "task": dict(self.task_spec),
        }
        if self.planner_model is not None:
            d["planner_model"] = self.planner_model
        if self.planner_defaults:
            d["planner"] = dict(self.planner_defaults)
        return d

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path


def _pose_list(p: Pose2) -> list[float]:
    return [p.x, p.y, p.theta]


# --------------------------------------------------------------------------
# parsing


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


def _nums(v, n: Optional[int], where: str) -> list[float]:
    if not isinstance(v, (list, tuple)) or (n is not None and len(v) != n):
        want = f"{n} numbers" if n is not None else "a list of numbers"
        raise ScenarioError(f"{where}: expected {want}, got {v!r}")
    return [_num(x, f"{where}[{i}]") for i, x in enumerate(v)]


def _req(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ScenarioError(f"{where}.{key}: required field missing" if where else f"{key}: required field missing")
    return d[key]


def build_shape(spec: dict, where: str) -> ConvexPolygon:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ScenarioError(f"{where}: expected exactly one of box / regular / points")
    (kind, args), = spec.items()
    try:
        if kind == "box":
            w, h = _nums(args, 2, f"{where}.box")
            return ConvexPolygon.box(w, h)
        if kind == "regular":
            a = _nums(args, None, f"{where}.regular")
            if len(a) not in (2, 3):
                raise ScenarioError(f"{where}.regular: expected [n, radius] or [n, radius, phase]")
            return ConvexPolygon.regular(int(a[0]), a[1], a[2] if len(a) == 3 else 0.0)
        if kind == "points":
            if not isinstance(args, list):
                raise ScenarioError(f"{where}.points: expected a list of [x, y]")
            pts = [_nums(p, 2, f"{where}.points[{i}]") for i, p in enumerate(args)]
            return ConvexPolygon.from_points(pts)
    except ValueError as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(f"{where}: {e}") from e
    raise ScenarioError(f"{where}: unknown shape kind {kind!r}")


def _pose(v, where: str) -> Pose2:
    return Pose2(*_nums(v, 3, where))


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("top level: expected a mapping")
    ws = Workspace(*_nums(_req(d, "workspace", ""), 4, "workspace"))

    a = _req(d, "arm", "")
    lengths = _nums(_req(a, "link_lengths", "arm"), None, "arm.link_lengths")
    lims = _req(a, "joint_limits", "arm")
    if not isinstance(lims, list):
        raise ScenarioError("arm.joint_limits: expected a list of [lo, hi] pairs")
    limits = [tuple(_nums(p, 2, f"arm.joint_limits[{i}]")) for i, p in enumerate(lims)]
    gd = d.get("gripper", {}) or {}
    try:
        gripper = Gripper(**{k: _num(v, f"gripper.{k}") for k, v in gd.items()})
    except TypeError as e:
        raise ScenarioError(f"gripper: {e}") from e
    try:
        arm = ArmModel(
            _pose(_req(a, "base", "arm"), "arm.base"),
            tuple(lengths),
            tuple(limits),
            manipulability_threshold=_num(a.get("manipulability_threshold", 1e-3), "arm.manipulability_threshold"),
            link_width=_num(a.get("link_width", 0.04), "arm.link_width"),
            gripper=gripper,
        )
    except ValueError as e:
        raise ScenarioError(f"arm: {e}") from e
    joints = tuple(_nums(_req(a, "joints", "arm"), arm.dof, "arm.joints"))

    pd = d.get("physics", {}) or {}
    try:
        physics = PhysicsConfig(**pd)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"physics: {e}") from e

    shapes = _req(d, "shapes", "")
    if not isinstance(shapes, dict) or not shapes:
        raise ScenarioError("shapes: expected a non-empty mapping of named shapes")

    def ref(name, where):
        if name not in shapes:
            raise ScenarioError(f"{where}.shape: unknown shape {name!r}")
        return name

    objs = _req(d, "objects", "")
    if not isinstance(objs, list) or not objs:
        raise ScenarioError("objects: need at least one movable object")
    objects = []
    for i, o in enumerate(objs):
        w = f"objects[{i}]"
        label = o.get("label") if isinstance(o, dict) else None
        objects.append(ObjectSpec(ref(_req(o, "shape", w), w), _pose(_req(o, "pose", w), f"{w}.pose"),
                                  None if label is None else str(label)))
    obstacles = []
    for i, o in enumerate(d.get("obstacles", []) or []):
        w = f"obstacles[{i}]"
        obstacles.append(ObstacleSpec(ref(_req(o, "shape", w), w), _pose(_req(o, "pose", w), f"{w}.pose")))

    task = dict(_req(d, "task", ""))
    planner = dict(d.get("planner", {}) or {})
    for k in planner:
        if k not in PLANNER_KEYS:
            raise ScenarioError(f"planner.{k}: unknown planner setting (allowed: {', '.join(PLANNER_KEYS)})")

    sc = Scenario(ws, arm, joints, {k: dict(v) for k, v in shapes.items()}, objects, obstacles, task,
                  physics, d.get("planner_model"), planner, str(d.get("name", "scenario")))
    validate(sc)
    return sc


def validate(sc: Scenario) -> None:
    """Raise :class:`ScenarioError` naming the first violated invariant."""
    n = sc.n_objects
    kind = sc.task_spec.get("kind")
    if kind not in ("grasp", "relocate", "sort"):
        raise ScenarioError(f"task.kind: expected grasp, relocate or sort, got {kind!r}")
    if kind in ("grasp", "relocate"):
        t = sc.task_spec.get("target")
        if not isinstance(t, int) or isinstance(t, bool) or not 0 <= t < n:
            raise ScenarioError(f"task.target: index {t!r} out of range for {n} objects")
    if kind == "relocate":
        c = _nums(_req(sc.task_spec, "goal_center", "task"), 2, "task.goal_center")
        if not sc.workspace.contains(*c):
            raise ScenarioError("task.goal_center: goal center lies outside the workspace")
    if kind == "sort":
        if any(lbl is None for lbl in sc.labels):
            raise ScenarioError("objects: every object needs a label for sorting")
        if len(set(sc.labels)) < 2:
            raise ScenarioError("objects: sorting needs at least two classes")
    try:
        sc.task()
    except (TypeError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(f"task: {e}") from e

    for i, o in enumerate(sc.objects):
        if not sc.workspace.contains(o.pose.x, o.pose.y):
            raise ScenarioError(f"objects[{i}].pose: initial centroid lies outside the workspace")
    world = sc.world()
    if not sc.arm.within_limits(sc.joints):
        raise ScenarioError("arm.joints: start configuration violates the joint limits")
    start = sc.start_state(world)
    if not start.valid:
        raise ScenarioError("initial state is invalid (robot collision or interpenetrating bodies)")


def loads(text: str) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark is not None else ""
        raise ScenarioError(f"parse error: {where}{getattr(e, 'problem', None) or e}") from e
    return scenario_from_dict(data)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"{path}: {e.strerror}") from e
    try:
        return loads(text)
    except ScenarioError as e:
        raise ScenarioError(f"{path}: {e}") from e


def save_scenario(sc: Scenario, path) -> Path:
    return sc.save(path)


BUILTIN_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def resolve_scenario_path(name_or_path) -> Path:
    """Accept a file path or the stem of a bundled scenario."""
    p = Path(name_or_path)
    if p.exists():
        return p
    cand = BUILTIN_DIR / f"{name_or_path}.yaml"
    if cand.exists():
        return cand
    raise ScenarioError(f"{name_or_path}: no such scenario file or bundled scenario")
