"""Planar revolute arm: forward kinematics, task Jacobian, and twist projection.

The end-effector pose is the gripper's tool-center point (the middle of the
region between the fingers) with the heading pointing along the fingers.
The task Jacobian has rows (dx, dy, dphi) so its third row is all ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .geometry import TOUCH_EPS, ConvexPolygon, Pose2, sat_overlap, transform_points

PINV_CUTOFF = 1e-10
DEFAULT_MANIPULABILITY_THRESHOLD = 1e-3
DEFAULT_DT = 0.01


@dataclass(frozen=True)
class Twist:
    """End-effector velocity (world frame) held for ``duration`` seconds."""

    vx: float
    vy: float
    omega: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0.0:
            raise ValueError("twist duration must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.omega], dtype=float)

    def is_zero(self) -> bool:
        return self.vx == 0.0 and self.vy == 0.0 and self.omega == 0.0


@dataclass(frozen=True)
class Gripper:
    """Parallel-jaw gripper outline in the tool frame (x forward).

    Two fingers of ``finger_width`` flank a gap of ``finger_gap`` and reach
    ``finger_depth`` along x, centered on the tool point; the palm sits
    behind them.
    """

    finger_gap: float = 0.08
    finger_depth: float = 0.06
    finger_width: float = 0.015
    palm_depth: float = 0.02

    def __post_init__(self):
        if min(self.finger_gap, self.finger_depth, self.finger_width, self.palm_depth) <= 0:
            raise ValueError("gripper dimensions must be positive")

    def pieces(self) -> list[np.ndarray]:
        """Convex pieces (palm, left finger, right finger) as CCW tool-frame vertex arrays."""
        hd = self.finger_depth / 2.0
        g = self.finger_gap / 2.0
        w = self.finger_width

        def rect(x0, x1, y0, y1):
            return np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], dtype=float)

        return [
            rect(-hd - self.palm_depth, -hd, -g - w, g + w),
            rect(-hd, hd, g, g + w),
            rect(-hd, hd, -g - w, -g),
        ]

    @property
    def region_half_extents(self) -> tuple[float, float]:
        """Half sizes (along x, along y) of the between-finger rectangle."""
        return self.finger_depth / 2.0, self.finger_gap / 2.0

    @property
    def radius(self) -> float:
        return float(max(np.hypot(p[:, 0], p[:, 1]).max() for p in self.pieces()))


@dataclass(frozen=True)
class ArmModel:
    base_pose: Pose2
    link_lengths: tuple[float, ...]
    joint_limits: tuple[tuple[float, float], ...]
    manipulability_threshold: float = DEFAULT_MANIPULABILITY_THRESHOLD
    link_width: float = 0.04
    gripper: Gripper = field(default_factory=Gripper)

    def __post_init__(self):
        object.__setattr__(self, "link_lengths", tuple(float(v) for v in self.link_lengths))
        object.__setattr__(self, "joint_limits", tuple((float(a), float(b)) for a, b in self.joint_limits))
        if len(self.link_lengths) < 3:
            raise ValueError("the arm needs at least 3 joints for a full-rank planar task Jacobian")
        if any(v <= 0 for v in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if len(self.joint_limits) != len(self.link_lengths):
            raise ValueError("one joint limit pair per link is required")
        if any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("joint limits must satisfy min < max")
        if self.manipulability_threshold < 0:
            raise ValueError("manipulability threshold must be non-negative")
        if self.link_width <= 0:
            raise ValueError("link width must be positive")

    @property
    def dof(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return sum(self.link_lengths)

    # Arrays consumed by the compiled kernels.
    def base_array(self) -> np.ndarray:
        return self.base_pose.as_array()

    def lengths_array(self) -> np.ndarray:
        return np.array(self.link_lengths)

    def limits_array(self) -> np.ndarray:
        return np.array(self.joint_limits)

    def within_limits(self, joints) -> bool:
        q = np.asarray(joints, dtype=float)
        lim = self.limits_array()
        return bool(np.all(np.isfinite(q)) and np.all(q >= lim[:, 0]) and np.all(q <= lim[:, 1]))


@dataclass(frozen=True, eq=False)
class ControlSegment:
    """Piecewise-constant joint velocities produced by projecting one twist."""

    velocities: np.ndarray  # (steps, dof) rad/s
    dt: float
    source_twist: Twist

    def __post_init__(self):
        v = np.array(self.velocities, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "velocities", v)

    @property
    def samples(self) -> list[tuple[np.ndarray, float]]:
        return [(row, self.dt) for row in self.velocities]

    @property
    def duration(self) -> float:
        return len(self.velocities) * self.dt

    def __len__(self) -> int:
        return len(self.velocities)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ControlSegment)
            and self.dt == other.dt
            and self.source_twist == other.source_twist
            and np.array_equal(self.velocities, other.velocities)
        )


ControlSequence = list  # list[ControlSegment], in execution order


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _chain(base, lengths, q):
    """Joint positions (r+1, 2) and cumulative link headings (r,)."""
    r = lengths.shape[0]
    pts = np.empty((r + 1, 2))
    heads = np.empty(r)
    pts[0, 0] = base[0]
    pts[0, 1] = base[1]
    phi = base[2]
    for i in range(r):
        phi += q[i]
        heads[i] = phi
        pts[i + 1, 0] = pts[i, 0] + lengths[i] * math.cos(phi)
        pts[i + 1, 1] = pts[i, 1] + lengths[i] * math.sin(phi)
    return pts, heads


@njit(cache=True)
def _fk(base, lengths, q):
    pts, heads = _chain(base, lengths, q)
    r = lengths.shape[0]
    return pts[r, 0], pts[r, 1], heads[r - 1]


@njit(cache=True)
def _jacobian(base, lengths, q):
    pts, heads = _chain(base, lengths, q)
    r = lengths.shape[0]
    J = np.empty((3, r))
    ex = pts[r, 0]
    ey = pts[r, 1]
    for i in range(r):
        J[0, i] = -(ey - pts[i, 1])
        J[1, i] = ex - pts[i, 0]
        J[2, i] = 1.0
    return J


@njit(cache=True)
def _manipulability(J):
    d = np.linalg.det(J @ J.T)
    if d <= 0.0:
        return 0.0
    return math.sqrt(d)


@njit(cache=True)
def _pinv(J):
    u, s, vt = np.linalg.svd(J, full_matrices=False)
    sinv = np.zeros_like(s)
    for k in range(s.shape[0]):
        if s[k] > PINV_CUTOFF:
            sinv[k] = 1.0 / s[k]
    return (vt.T * sinv) @ u.T


@njit(cache=True)
def _link_rect(p0x, p0y, p1x, p1y, width):
    dx = p1x - p0x
    dy = p1y - p0y
    n = math.sqrt(dx * dx + dy * dy)
    hx = -dy / n * width * 0.5
    hy = dx / n * width * 0.5
    out = np.empty((4, 2))
    out[0, 0] = p0x - hx
    out[0, 1] = p0y - hy
    out[1, 0] = p1x - hx
    out[1, 1] = p1y - hy
    out[2, 0] = p1x + hx
    out[2, 1] = p1y + hy
    out[3, 0] = p0x + hx
    out[3, 1] = p0y + hy
    return out


@njit(cache=True)
def _robot_ok(base, lengths, width, q, grip_local, grip_off, obst, obst_off, obst_c, obst_r):
    """Self-collision between non-adjacent links (gripper counts as the last
    link's child) and robot-obstacle collision."""
    pts, heads = _chain(base, lengths, q)
    r = lengths.shape[0]
    ex = pts[r, 0]
    ey = pts[r, 1]
    eth = heads[r - 1]
    rects = np.empty((r, 4, 2))
    for i in range(r):
        rects[i] = _link_rect(pts[i, 0], pts[i, 1], pts[i + 1, 0], pts[i + 1, 1], width)
    for a in range(r):
        for b in range(a + 2, r):
            ov, _, _ = sat_overlap(rects[a], rects[b])
            if ov > TOUCH_EPS:
                return False
    npieces = grip_off.shape[0] - 1
    gw = transform_points(grip_local, ex, ey, eth)
    for p in range(npieces):
        piece = gw[grip_off[p]:grip_off[p + 1]]
        for a in range(r - 1):
            ov, _, _ = sat_overlap(rects[a], piece)
            if ov > TOUCH_EPS:
                return False
    nobs = obst_off.shape[0] - 1
    for o in range(nobs):
        ob = obst[obst_off[o]:obst_off[o + 1]]
        cx = obst_c[o, 0]
        cy = obst_c[o, 1]
        for a in range(r):
            mx = 0.5 * (pts[a, 0] + pts[a + 1, 0])
            my = 0.5 * (pts[a, 1] + pts[a + 1, 1])
            reach = 0.5 * lengths[a] + width + obst_r[o]
            if (mx - cx) ** 2 + (my - cy) ** 2 > reach * reach:
                continue
            ov, _, _ = sat_overlap(ob, rects[a])
            if ov > TOUCH_EPS:
                return False
        for p in range(npieces):
            ov, _, _ = sat_overlap(ob, gw[grip_off[p]:grip_off[p + 1]])
            if ov > TOUCH_EPS:
                return False
    return True


@njit(cache=True)
def _project(base, lengths, limits, threshold, width, q0, v, dt, steps,
             grip_local, grip_off, obst, obst_off, obst_c, obst_r, check_robot):
    """Per-substep pseudo-inverse projection with explicit Euler integration.

    Returns (ok, velocities (steps, r), joints (steps + 1, r)).
    """
    r = lengths.shape[0]
    U = np.zeros((steps, r))
    Q = np.empty((steps + 1, r))
    Q[0] = q0
    q = q0.copy()
    for i in range(steps + 1):
        J = _jacobian(base, lengths, q)
        if _manipulability(J) < threshold:
            return False, U, Q
        if i == steps:
            break
        u = _pinv(J) @ v
        U[i] = u
        for k in range(r):
            q[k] = q[k] + u[k] * dt
            if not (limits[k, 0] <= q[k] <= limits[k, 1]):
                return False, U, Q
        Q[i + 1] = q
        if check_robot and not _robot_ok(base, lengths, width, q, grip_local, grip_off,
                                         obst, obst_off, obst_c, obst_r):
            return False, U, Q
    return True, U, Q


@njit(cache=True)
def _integrate(q0, U, dt):
    Q = np.empty((U.shape[0] + 1, q0.shape[0]))
    Q[0] = q0
    q = q0.copy()
    for i in range(U.shape[0]):
        for k in range(q.shape[0]):
            q[k] = q[k] + U[i, k] * dt
        Q[i + 1] = q
    return Q


# --------------------------------------------------------------------------
# public API


def forward_kinematics(arm: ArmModel, joints) -> Pose2:
    x, y, th = _fk(arm.base_array(), arm.lengths_array(), np.asarray(joints, dtype=float))
    return Pose2(x, y, th)


def joint_positions(arm: ArmModel, joints) -> np.ndarray:
    pts, _ = _chain(arm.base_array(), arm.lengths_array(), np.asarray(joints, dtype=float))
    return pts


def jacobian(arm: ArmModel, joints) -> np.ndarray:
    """3 x r task Jacobian (rows d x, d y, d heading)."""
    return _jacobian(arm.base_array(), arm.lengths_array(), np.asarray(joints, dtype=float))


def manipulability(J) -> float:
    """Yoshikawa measure sqrt(det(J J^T)); rounding-negative determinants give 0."""
    return _manipulability(np.ascontiguousarray(J, dtype=float))


def pinv(J) -> np.ndarray:
    """SVD pseudo-inverse with singular values below 1e-10 truncated."""
    return _pinv(np.ascontiguousarray(J, dtype=float))


def link_polygons(arm: ArmModel, joints) -> list[np.ndarray]:
    pts = joint_positions(arm, joints)
    return [_link_rect(*pts[i], *pts[i + 1], arm.link_width) for i in range(arm.dof)]


def gripper_polygons(arm: ArmModel, joints) -> list[np.ndarray]:
    ee = forward_kinematics(arm, joints)
    return [transform_points(p, ee.x, ee.y, ee.theta) for p in arm.gripper.pieces()]


class ObstacleSet:
    """Packed world-frame obstacle vertices for the compiled kernels."""

    def __init__(self, polygons: Sequence[np.ndarray] = ()):
        polys = [np.asarray(p, dtype=float) for p in polygons]
        self.count = len(polys)
        self.verts = np.concatenate(polys) if polys else np.zeros((0, 2))
        self.offsets = np.cumsum([0] + [len(p) for p in polys]).astype(np.int64)
        self.centers = np.array([p.mean(axis=0) for p in polys]) if polys else np.zeros((0, 2))
        self.radii = (
            np.array([np.hypot(*(p - p.mean(axis=0)).T).max() for p in polys]) if polys else np.zeros(0)
        )
        self.polygons = polys


EMPTY_OBSTACLES = ObstacleSet()


def _packed_gripper(arm: ArmModel):
    pieces = arm.gripper.pieces()
    return np.concatenate(pieces), np.cumsum([0] + [len(p) for p in pieces]).astype(np.int64)


def robot_valid(arm: ArmModel, joints, obstacles: ObstacleSet = EMPTY_OBSTACLES) -> bool:
    """Joint limits, non-adjacent self-collision, and robot-obstacle collision."""
    q = np.asarray(joints, dtype=float)
    if not arm.within_limits(q):
        return False
    gl, go = _packed_gripper(arm)
    return bool(_robot_ok(arm.base_array(), arm.lengths_array(), arm.link_width, q, gl, go,
                          obstacles.verts, obstacles.offsets, obstacles.centers, obstacles.radii))


def substeps_for(duration: float, dt: float) -> int:
    n = round(duration / dt)
    if n < 1 or abs(n * dt - duration) > 1e-9:
        raise ValueError(f"substep {dt} does not divide duration {duration}")
    return n


def jacobian_projection(
    arm: ArmModel,
    start,
    v: Twist,
    dt: float = DEFAULT_DT,
    obstacles: Optional[ObstacleSet] = None,
) -> Optional[ControlSegment]:
    """Convert an end-effector twist into a joint-velocity segment.

    At each substep the joint rates are ``pinv(J) @ v``.  Returns None as
    soon as a configuration along the way leaves the joint limits, collides
    (only checked when ``obstacles`` is given), or drops below the arm's
    manipulability threshold.
    """
    seg, _ = project_with_joints(arm, start, v, dt, obstacles)
    return seg


def project_with_joints(arm: ArmModel, start, v: Twist, dt: float = DEFAULT_DT,
                        obstacles: Optional[ObstacleSet] = None):
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = substeps_for(v.duration, dt)
    q0 = np.asarray(start, dtype=float).copy()
    check = obstacles is not None
    obs = obstacles if check else EMPTY_OBSTACLES
    gl, go = _packed_gripper(arm)
    ok, U, Q = _project(arm.base_array(), arm.lengths_array(), arm.limits_array(),
                        arm.manipulability_threshold, arm.link_width, q0, v.as_array(), dt, steps,
                        gl, go, obs.verts, obs.offsets, obs.centers, obs.radii, check)
    if not ok:
        return None, None
    return ControlSegment(U, dt, v), Q


def integrate_segment(start, segment: ControlSegment) -> np.ndarray:
    """Joint configurations visited when replaying a segment (steps + 1 rows)."""
    return _integrate(np.asarray(start, dtype=float).copy(), np.asarray(segment.velocities), segment.dt)


def solve_ik(arm: ArmModel, target: Pose2, seed, iters: int = 500, tol: float = 1e-10) -> np.ndarray:
    """Damped least-squares IK used to author scenario start configurations."""
    q = np.asarray(seed, dtype=float).copy()
    lim = arm.limits_array()
    for _ in range(iters):
        ee = forward_kinematics(arm, q)
        err = np.array([target.x - ee.x, target.y - ee.y, math.remainder(target.theta - ee.theta, 2 * math.pi)])
        if np.linalg.norm(err) < tol:
            break
        J = jacobian(arm, q)
        q = q + J.T @ np.linalg.solve(J @ J.T + 1e-6 * np.eye(3), err)
        q = np.clip(q, lim[:, 0], lim[:, 1])
    return q
