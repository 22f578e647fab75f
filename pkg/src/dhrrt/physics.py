"""Quasi-static planar push simulation.

The gripper follows its commanded trajectory kinematically.  At every
substep, penetrations are resolved by Gauss-Seidel sweeps of MTV pushes in a
fixed index order: the gripper and obstacles never yield, an object pushed by
a body closer to the pusher in the contact chain yields fully, and two
objects at the same chain depth split the correction.  Objects that are never
touched keep their poses exactly.  Each push also turns the object about its
centroid in proportion to the lever arm of the contact patch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .geometry import TOUCH_EPS, ConvexPolygon, Pose2, PosedPolygon, sat_overlap, transform_points
from .kinematics import (
    ArmModel,
    ControlSegment,
    ObstacleSet,
    Twist,
    _chain,
    _packed_gripper,
    integrate_segment,
    project_with_joints,
    robot_valid,
)

__all__ = [
    "PhysicsConfig", "Workspace", "SystemState", "World", "WorkMeter", "Twist",
    "step", "is_valid", "perturb",
]

UNMOVED = 1 << 30
_FEATURE_TOL = 1e-3
_PERTURB_INCREMENT = 0.002

OK, JAMMED, EJECTED = 0, 1, 2


@dataclass(frozen=True)
class PhysicsConfig:
    substep: float = 0.01
    max_resolution_iters: int = 32
    rotation_coupling: float = 0.3
    contact_tolerance: float = 1e-4

    def __post_init__(self):
        if self.substep <= 0:
            raise ValueError("substep must be positive")
        if self.max_resolution_iters < 1:
            raise ValueError("max_resolution_iters must be >= 1")
        if not 0.0 <= self.rotation_coupling <= 1.0:
            raise ValueError("rotation_coupling must lie in [0, 1]")
        if self.contact_tolerance <= 0:
            raise ValueError("contact_tolerance must be positive")


@dataclass(frozen=True)
class Workspace:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("empty workspace")

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def as_array(self) -> np.ndarray:
        return np.array([self.xmin, self.xmax, self.ymin, self.ymax])

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax)


@dataclass(frozen=True, eq=False)
class SystemState:
    """Robot joints, object poses as rows of (x, y, theta), and validity.

    ``gripper`` caches the end-effector pose computed from ``joints``.
    """

    joints: np.ndarray
    objects: np.ndarray
    valid: bool
    gripper: Pose2

    def __post_init__(self):
        j = np.array(self.joints, dtype=float)
        o = np.array(self.objects, dtype=float).reshape(-1, 3)
        j.setflags(write=False)
        o.setflags(write=False)
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "objects", o)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def object_pose(self, i: int) -> Pose2:
        x, y, th = self.objects[i]
        return Pose2(x, y, th)

    def poses(self) -> list[Pose2]:
        return [self.object_pose(i) for i in range(self.n_objects)]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SystemState)
            and self.valid == other.valid
            and np.array_equal(self.joints, other.joints)
            and np.array_equal(self.objects, other.objects)
        )

    __hash__ = None


@dataclass
class WorkMeter:
    """Deterministic count of simulation work, used by the simulated planning clock."""

    substeps: int = 0
    sat_units: int = 0
    broad_checks: int = 0

    def snapshot(self) -> tuple[int, int, int]:
        return self.substeps, self.sat_units, self.broad_checks


# --------------------------------------------------------------------------
# compiled contact kernels


@njit(cache=True)
def _wrap(th):
    t = th - 2.0 * math.pi * math.floor((th + math.pi) / (2.0 * math.pi))
    if t <= -math.pi:
        t += 2.0 * math.pi
    return t


@njit(cache=True)
def _refresh(W, local, off, poses, i):
    W[off[i]:off[i + 1]] = transform_points(local[off[i]:off[i + 1]], poses[i, 0], poses[i, 1], poses[i, 2])


@njit(cache=True)
def _push(poses, W, local, off, i, P, nx, ny, depth, coupling):
    """Move object i by depth along n; turn it by the lever of the contact patch."""
    poses[i, 0] += nx * depth
    poses[i, 1] += ny * depth
    if coupling > 0.0:
        Wi = W[off[i]:off[i + 1]]
        tx = -ny
        ty = nx
        minn = math.inf
        tmin = math.inf
        tmax = -math.inf
        for k in range(Wi.shape[0]):
            d = Wi[k, 0] * nx + Wi[k, 1] * ny
            if d < minn:
                minn = d
            t = Wi[k, 0] * tx + Wi[k, 1] * ty
            if t < tmin:
                tmin = t
            if t > tmax:
                tmax = t
        b0 = math.inf
        b1 = -math.inf
        for k in range(Wi.shape[0]):
            if Wi[k, 0] * nx + Wi[k, 1] * ny <= minn + _FEATURE_TOL:
                t = Wi[k, 0] * tx + Wi[k, 1] * ty
                b0 = min(b0, t)
                b1 = max(b1, t)
        maxn = -math.inf
        for k in range(P.shape[0]):
            d = P[k, 0] * nx + P[k, 1] * ny
            if d > maxn:
                maxn = d
        a0 = math.inf
        a1 = -math.inf
        for k in range(P.shape[0]):
            if P[k, 0] * nx + P[k, 1] * ny >= maxn - _FEATURE_TOL:
                t = P[k, 0] * tx + P[k, 1] * ty
                a0 = min(a0, t)
                a1 = max(a1, t)
        lo = max(a0, b0)
        hi = min(a1, b1)
        mid = 0.5 * (lo + hi) if lo <= hi else 0.5 * (b0 + b1)
        lever = mid - (poses[i, 0] * tx + poses[i, 1] * ty)
        half = 0.5 * (tmax - tmin)
        if half > 0.0:
            poses[i, 2] = _wrap(poses[i, 2] + coupling * math.atan2(-lever, half) * depth / half)
    _refresh(W, local, off, poses, i)


@njit(cache=True)
def _note(contacts, ncont, k, a, b):
    if ncont[0] < contacts.shape[0]:
        contacts[ncont[0], 0] = k
        contacts[ncont[0], 1] = a
        contacts[ncont[0], 2] = b
        ncont[0] += 1


@njit(cache=True)
def _resolve(poses, W, local, off, orad, G, goff, gx, gy, grad, obst, ooff, oc, orr,
             coupling, max_iters, level, work, contacts, ncont, k):
    N = poses.shape[0]
    npieces = goff.shape[0] - 1
    nobs = ooff.shape[0] - 1
    for _ in range(max_iters):
        pushed = False
        for p in range(npieces):
            Gp = G[goff[p]:goff[p + 1]]
            for i in range(N):
                dx = poses[i, 0] - gx
                dy = poses[i, 1] - gy
                rr = orad[i] + grad
                work[2] += 1
                if dx * dx + dy * dy > rr * rr:
                    continue
                Wi = W[off[i]:off[i + 1]]
                m = Gp.shape[0] + Wi.shape[0]
                work[1] += m
                ov, nx, ny = sat_overlap(Gp, Wi)
                if ov > TOUCH_EPS:
                    _push(poses, W, local, off, i, Gp, nx, ny, ov, coupling)
                    if level[i] > 1:
                        level[i] = 1
                    pushed = True
                    _note(contacts, ncont, k, -1, i)
        for i in range(N):
            if level[i] == UNMOVED:
                continue
            for j in range(N):
                if j == i:
                    continue
                dx = poses[i, 0] - poses[j, 0]
                dy = poses[i, 1] - poses[j, 1]
                rr = orad[i] + orad[j]
                work[2] += 1
                if dx * dx + dy * dy > rr * rr:
                    continue
                Wi = W[off[i]:off[i + 1]]
                Wj = W[off[j]:off[j + 1]]
                m = Wi.shape[0] + Wj.shape[0]
                work[1] += m
                ov, nx, ny = sat_overlap(Wi, Wj)
                if ov <= TOUCH_EPS:
                    continue
                li = level[i]
                lj = level[j]
                if li < lj:
                    _push(poses, W, local, off, j, Wi, nx, ny, ov, coupling)
                    level[j] = li + 1
                elif lj < li:
                    _push(poses, W, local, off, i, Wj, -nx, -ny, ov, coupling)
                else:
                    _push(poses, W, local, off, j, Wi, nx, ny, 0.5 * ov, coupling)
                    _push(poses, W, local, off, i, W[off[j]:off[j + 1]], -nx, -ny, 0.5 * ov, coupling)
                pushed = True
                _note(contacts, ncont, k, i, j)
        for i in range(N):
            if level[i] == UNMOVED:
                continue
            for o in range(nobs):
                dx = poses[i, 0] - oc[o, 0]
                dy = poses[i, 1] - oc[o, 1]
                rr = orad[i] + orr[o]
                work[2] += 1
                if dx * dx + dy * dy > rr * rr:
                    continue
                Ob = obst[ooff[o]:ooff[o + 1]]
                Wi = W[off[i]:off[i + 1]]
                m = Ob.shape[0] + Wi.shape[0]
                work[1] += m
                ov, nx, ny = sat_overlap(Ob, Wi)
                if ov > TOUCH_EPS:
                    _push(poses, W, local, off, i, Ob, nx, ny, ov, coupling)
                    pushed = True
                    _note(contacts, ncont, k, -2 - o, i)
        if not pushed:
            return True
    return False


@njit(cache=True)
def _check(poses, W, off, orad, G, goff, gx, gy, grad, obst, ooff, oc, orr, ws, tol, level, everything):
    """Status after resolution: penetration beyond tol, or a centroid outside the workspace."""
    N = poses.shape[0]
    for i in range(N):
        if everything or level[i] != UNMOVED:
            if not (ws[0] <= poses[i, 0] <= ws[1] and ws[2] <= poses[i, 1] <= ws[3]):
                return 2
    npieces = goff.shape[0] - 1
    for p in range(npieces):
        Gp = G[goff[p]:goff[p + 1]]
        for i in range(N):
            dx = poses[i, 0] - gx
            dy = poses[i, 1] - gy
            rr = orad[i] + grad
            if dx * dx + dy * dy > rr * rr:
                continue
            ov, _, _ = sat_overlap(Gp, W[off[i]:off[i + 1]])
            if ov > tol:
                return 1
    for i in range(N):
        if not everything and level[i] == UNMOVED:
            continue
        Wi = W[off[i]:off[i + 1]]
        for j in range(N):
            if j == i or (everything and j < i):
                continue
            dx = poses[i, 0] - poses[j, 0]
            dy = poses[i, 1] - poses[j, 1]
            rr = orad[i] + orad[j]
            if dx * dx + dy * dy > rr * rr:
                continue
            ov, _, _ = sat_overlap(Wi, W[off[j]:off[j + 1]])
            if ov > tol:
                return 1
        for o in range(ooff.shape[0] - 1):
            dx = poses[i, 0] - oc[o, 0]
            dy = poses[i, 1] - oc[o, 1]
            rr = orad[i] + orr[o]
            if dx * dx + dy * dy > rr * rr:
                continue
            ov, _, _ = sat_overlap(obst[ooff[o]:ooff[o + 1]], Wi)
            if ov > tol:
                return 1
    return 0


@njit(cache=True)
def _all_world(local, off, poses):
    W = np.empty_like(local)
    for i in range(poses.shape[0]):
        W[off[i]:off[i + 1]] = transform_points(local[off[i]:off[i + 1]], poses[i, 0], poses[i, 1], poses[i, 2])
    return W


@njit(cache=True)
def _simulate(poses0, local, off, orad, glocal, goff, grad, gtraj, obst, ooff, oc, orr, ws,
              coupling, tol, max_iters, driver, ddx, ddy, all_active, stop_on_jam, record,
              work, contacts, ncont):
    """Run len(gtraj) substeps.  Returns (status, substeps_completed, poses, history)."""
    poses = poses0.copy()
    N = poses.shape[0]
    S = gtraj.shape[0]
    W = _all_world(local, off, poses)
    level = np.empty(N, dtype=np.int64)
    hist = np.empty((S + 1 if record else 0, N, 3))
    if record:
        hist[0] = poses
    for k in range(S):
        saved = poses.copy()
        gx = gtraj[k, 0]
        gy = gtraj[k, 1]
        G = transform_points(glocal, gx, gy, gtraj[k, 2])
        level[:] = 0 if all_active else UNMOVED
        if driver >= 0:
            poses[driver, 0] += ddx
            poses[driver, 1] += ddy
            level[driver] = 0
            _refresh(W, local, off, poses, driver)
        work[0] += 1
        _resolve(poses, W, local, off, orad, G, goff, gx, gy, grad, obst, ooff, oc, orr,
                 coupling, max_iters, level, work, contacts, ncont, k)
        status = _check(poses, W, off, orad, G, goff, gx, gy, grad, obst, ooff, oc, orr, ws, tol,
                        level, all_active)
        if status == 1 and stop_on_jam:
            return 1, k, saved, hist[:k + 1]
        if status != 0:
            return status, k, poses, hist[:k + 1]
        if record:
            hist[k + 1] = poses
    return 0, S, poses, hist


@njit(cache=True)
def _ee_traj(base, lengths, Q):
    r = lengths.shape[0]
    out = np.empty((Q.shape[0], 3))
    for k in range(Q.shape[0]):
        pts, heads = _chain(base, lengths, Q[k])
        out[k, 0] = pts[r, 0]
        out[k, 1] = pts[r, 1]
        out[k, 2] = heads[r - 1]
    return out


# --------------------------------------------------------------------------


@dataclass
class StepRecord:
    """Per-substep history of one simulated segment (for traces)."""

    joints: np.ndarray       # (S+1, r)
    gripper: np.ndarray      # (S+1, 3)
    objects: np.ndarray      # (S+1, N, 3)
    contacts: list           # (substep, body_a, body_b); -1 gripper, -2-k obstacle k


class World:
    """A physical scene: the arm, movable object shapes, static obstacles, bounds.

    The same class backs the planner's internal model and the simulated real
    world; they differ only in the shapes they are given.
    """

    def __init__(self, arm: ArmModel, shapes: Sequence[ConvexPolygon], workspace: Workspace,
                 obstacles: Sequence[PosedPolygon] = (), cfg: PhysicsConfig = PhysicsConfig()):
        if not shapes:
            raise ValueError("a world needs at least one movable object")
        self.arm = arm
        self.shapes = list(shapes)
        self.workspace = workspace
        self.obstacle_polygons = list(obstacles)
        self.cfg = cfg
        self.obstacles = ObstacleSet([p.world() for p in self.obstacle_polygons])
        self.work = WorkMeter()

        self._local = np.ascontiguousarray(np.concatenate([s.vertices for s in self.shapes]))
        self._off = np.cumsum([0] + [len(s) for s in self.shapes]).astype(np.int64)
        self._orad = np.array([s.radius for s in self.shapes])
        self._glocal, self._goff = _packed_gripper(arm)
        self._grad = arm.gripper.radius
        self._ws = workspace.as_array()
        self._base = arm.base_array()
        self._lengths = arm.lengths_array()
        self._work = np.zeros(3, dtype=np.int64)
        self.last_completed = 0

    @property
    def n_objects(self) -> int:
        return len(self.shapes)

    def with_shapes(self, shapes: Sequence[ConvexPolygon]) -> World:
        return World(self.arm, shapes, self.workspace, self.obstacle_polygons, self.cfg)

    def gripper_pose(self, joints) -> Pose2:
        x, y, th = _ee_traj(self._base, self._lengths, np.asarray(joints, dtype=float)[None, :])[0]
        return Pose2(x, y, th)

    def object_world(self, state: SystemState, i: int) -> np.ndarray:
        x, y, th = state.objects[i]
        return transform_points(self.shapes[i].vertices, x, y, th)

    def _state(self, joints, objects, valid: bool) -> SystemState:
        return SystemState(joints, objects, bool(valid), self.gripper_pose(joints))

    def make_state(self, joints, poses) -> SystemState:
        """Build a state from joints and poses, with validity evaluated."""
        objs = np.array([p.as_array() if isinstance(p, Pose2) else p for p in poses], dtype=float).reshape(-1, 3)
        if len(objs) != self.n_objects:
            raise ValueError(f"expected {self.n_objects} object poses, got {len(objs)}")
        objs[:, 2] = [Pose2(0, 0, t).theta for t in objs[:, 2]]
        draft = self._state(joints, objs, True)
        return self._state(joints, objs, self.is_valid(draft))

    def invalid(self, state: SystemState) -> SystemState:
        return SystemState(state.joints, state.objects, False, state.gripper)

    # ---- validity

    def penetration_status(self, state: SystemState) -> int:
        g = state.gripper
        G = transform_points(self._glocal, g.x, g.y, g.theta)
        W = _all_world(self._local, self._off, np.ascontiguousarray(state.objects))
        level = np.zeros(self.n_objects, dtype=np.int64)
        return int(_check(np.ascontiguousarray(state.objects), W, self._off, self._orad, G, self._goff,
                          g.x, g.y, self._grad, self.obstacles.verts, self.obstacles.offsets,
                          self.obstacles.centers, self.obstacles.radii, self._ws,
                          self.cfg.contact_tolerance, level, True))

    def is_valid(self, state: SystemState) -> bool:
        """Robot valid, every centroid inside the workspace, no penetration beyond tolerance."""
        if state.n_objects != self.n_objects:
            return False
        if not robot_valid(self.arm, state.joints, self.obstacles):
            return False
        return self.penetration_status(state) == OK

    # ---- transitions

    def _run(self, state, Q, driver=-1, ddx=0.0, ddy=0.0, all_active=False, stop_on_jam=False, record=False):
        gtraj = _ee_traj(self._base, self._lengths, Q[1:])
        contacts = np.zeros((4096 if record else 0, 3), dtype=np.int64)
        ncont = np.zeros(1, dtype=np.int64)
        self._work[:] = 0
        status, done, poses, hist = _simulate(
            np.ascontiguousarray(state.objects), self._local, self._off, self._orad, self._glocal, self._goff,
            self._grad, gtraj, self.obstacles.verts, self.obstacles.offsets, self.obstacles.centers,
            self.obstacles.radii, self._ws, self.cfg.rotation_coupling, self.cfg.contact_tolerance,
            self.cfg.max_resolution_iters, driver, ddx, ddy, all_active, stop_on_jam, record,
            self._work, contacts, ncont)
        self.work.substeps += int(self._work[0])
        self.work.sat_units += int(self._work[1])
        self.work.broad_checks += int(self._work[2])
        rec = None
        if record:
            g0 = np.array([[state.gripper.x, state.gripper.y, state.gripper.theta]])
            rec = StepRecord(Q[:done + 1].copy(), np.vstack([g0, gtraj[:done]]), hist.copy(),
                             [tuple(int(v) for v in row) for row in contacts[:ncont[0]]])
        return int(status), int(done), poses, rec

    def step(self, state: SystemState, v: Twist) -> SystemState:
        """Transition under a constant end-effector twist; invalid on any failure."""
        return self.step_with_segment(state, v)[0]

    def step_with_segment(self, state: SystemState, v: Twist):
        """Like :meth:`step` but also returns the joint-space segment (None on failure)."""
        if not state.valid:
            return self.invalid(state), None
        if v.is_zero():
            steps = round(v.duration / self.cfg.substep)
            return state, ControlSegment(np.zeros((steps, self.arm.dof)), self.cfg.substep, v)
        segment, Q = project_with_joints(self.arm, state.joints, v, self.cfg.substep, self.obstacles)
        if segment is None:
            self.work.substeps += round(v.duration / self.cfg.substep)
            return self.invalid(state), None
        status, _, poses, _ = self._run(state, Q)
        return self._state(Q[-1], poses, status == OK), (segment if status == OK else None)

    def apply_segment(self, state: SystemState, segment: ControlSegment, stop_on_jam: bool = False,
                      record: bool = False):
        """Replay a joint-space segment.

        Returns ``(state, completed, record)``.  With ``stop_on_jam`` an
        unresolvable contact halts the robot at the last good substep
        (``completed`` is False) instead of invalidating the state.
        """
        if segment.dt != self.cfg.substep:
            raise ValueError("segment substep does not match the physics substep")
        Q = integrate_segment(state.joints, segment)
        for q in Q[1:]:
            if not robot_valid(self.arm, q, self.obstacles):
                return self.invalid(state), False, None
        self.last_completed = len(segment)
        if not np.any(segment.velocities):
            return state, True, None
        status, done, poses, rec = self._run(state, Q, stop_on_jam=stop_on_jam, record=record)
        self.last_completed = done
        if status == JAMMED and stop_on_jam:
            return self._state(Q[done], poses, True), False, rec
        return self._state(Q[-1] if status == OK else Q[done + 1], poses, status == OK), status == OK, rec

    def perturb(self, state: SystemState, rng: np.random.Generator, speed: float, duration: float = 0.1):
        """Shove one uniformly chosen object along a uniformly random heading.

        The object travels ``speed * duration`` in small increments, pushing
        whatever it meets; it stops early if it jams against the gripper or an
        obstacle.  Returns ``(state, (index, heading))``.
        """
        if speed < 0:
            raise ValueError("speed must be non-negative")
        i = int(rng.integers(self.n_objects))
        heading = float(rng.uniform(-math.pi, math.pi))
        return self.perturb_fixed(state, i, heading, speed, duration), (i, heading)

    def perturb_fixed(self, state: SystemState, i: int, heading: float, speed: float,
                      duration: float = 0.1) -> SystemState:
        """Deterministic core of :meth:`perturb` for a given object and heading."""
        dist = speed * duration
        if dist == 0.0 or not state.valid:
            return state
        n = max(1, math.ceil(dist / _PERTURB_INCREMENT))
        ddx = dist * math.cos(heading) / n
        ddy = dist * math.sin(heading) / n
        Q = np.repeat(np.asarray(state.joints)[None, :], n + 1, axis=0)
        status, _, poses, _ = self._run(state, Q, driver=i, ddx=ddx, ddy=ddy, stop_on_jam=True)
        return self._state(state.joints, poses, status != EJECTED)

    def settle(self, state: SystemState) -> SystemState:
        """Separate residual penetrations (e.g. after swapping in different shapes)."""
        Q = np.repeat(np.asarray(state.joints)[None, :], 2, axis=0)
        status, _, poses, _ = self._run(state, Q, all_active=True)
        out = self._state(state.joints, poses, status == OK)
        if out.valid and not robot_valid(self.arm, out.joints, self.obstacles):
            return self.invalid(out)
        return out


def step(state: SystemState, v: Twist, world: World) -> SystemState:
    return world.step(state, v)


def is_valid(state: SystemState, world: World) -> bool:
    return world.is_valid(state)


def perturb(state: SystemState, rng: np.random.Generator, speed: float, world: World,
            duration: float = 0.1) -> SystemState:
    return world.perturb(state, rng, speed, duration)[0]
