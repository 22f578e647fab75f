"""Planar rigid transforms and convex polygon queries.

Poses are SE(2) elements with the heading kept in (-pi, pi].  Polygons are
stored in their body frame, counter-clockwise, with the area centroid at the
origin.  Collision uses the separating-axis test on edge normals; distance
uses GJK on the support functions, which also works for the degenerate
point/segment hulls that show up when a sorting class has one object.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

#: Overlap at or below this depth counts as touching, not penetrating.
TOUCH_EPS = 1e-9


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    t = math.remainder(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    return t


@dataclass(frozen=True, slots=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose {self.x, self.y, self.theta}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def inverse(self) -> Pose2:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def apply(self, point) -> tuple[float, float]:
        """Transform a body-frame point into the world frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        px, py = point
        return (self.x + c * px - s * py, self.y + s * px + c * py)

    def __matmul__(self, other: Pose2) -> Pose2:
        return compose(self, other)


IDENTITY = Pose2()


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Rigid composition ``a o b``: ``b`` expressed in the frame of ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def angle_diff(a: float, b: float) -> float:
    """Absolute wrapped angular difference in [0, pi]."""
    return abs(wrap_angle(a - b))


# --------------------------------------------------------------------------
# convex polygons


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise convex hull (Andrew's monotone chain).

    Collinear points are dropped.  One or two distinct points, or a collinear
    set, give the degenerate hull (a point or the two extreme points).
    """
    pts = sorted(set((float(p[0]), float(p[1])) for p in points))
    if not pts:
        raise ValueError("convex_hull needs at least one point")
    if len(pts) <= 2:
        return np.array(pts, dtype=float)

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=float)


def polygon_area_centroid(vertices: np.ndarray) -> tuple[float, np.ndarray]:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    area = 0.5 * cr.sum()
    if abs(area) < 1e-300:
        return 0.0, v.mean(axis=0)
    cx = ((x + xn) * cr).sum() / (6.0 * area)
    cy = ((y + yn) * cr).sum() / (6.0 * area)
    return area, np.array([cx, cy])


class ConvexPolygon:
    """Strictly convex CCW polygon in its body frame, centroid at the origin."""

    __slots__ = ("vertices", "radius")

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("a polygon needs at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite polygon vertex")
        n = len(v)
        for i in range(n):
            if _cross(v[i], v[(i + 1) % n], v[(i + 2) % n]) <= 0.0:
                raise ValueError("vertices must be strictly convex and counter-clockwise")
        _, c = polygon_area_centroid(v)
        if np.hypot(*c) > 1e-9:
            raise ValueError(f"polygon centroid {c} is not at the origin")
        v.setflags(write=False)
        self.vertices = v
        self.radius = float(np.sqrt((v ** 2).sum(axis=1)).max())

    @classmethod
    def from_points(cls, points) -> ConvexPolygon:
        """Hull of arbitrary points, re-centered on its area centroid."""
        hull = convex_hull(points)
        if len(hull) < 3:
            raise ValueError("points are degenerate (fewer than 3 hull vertices)")
        _, c = polygon_area_centroid(hull)
        return cls(hull - c)

    @classmethod
    def box(cls, width: float, height: float) -> ConvexPolygon:
        w, h = width / 2.0, height / 2.0
        return cls([(-w, -h), (w, -h), (w, h), (-w, h)])

    @classmethod
    def regular(cls, n: int, radius: float, phase: float = 0.0) -> ConvexPolygon:
        a = phase + np.arange(n) * TWO_PI / n
        return cls(np.column_stack([radius * np.cos(a), radius * np.sin(a)]))

    def __len__(self) -> int:
        return len(self.vertices)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConvexPolygon) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self) -> int:
        return hash(self.vertices.tobytes())

    def __repr__(self) -> str:
        return f"ConvexPolygon(n={len(self)}, radius={self.radius:.4g})"

    @property
    def area(self) -> float:
        return polygon_area_centroid(self.vertices)[0]

    def world(self, pose: Pose2) -> np.ndarray:
        return transform_points(self.vertices, pose.x, pose.y, pose.theta)

    def extent(self, direction) -> float:
        """Width of the polygon measured along a unit direction."""
        p = self.vertices @ np.asarray(direction, dtype=float)
        return float(p.max() - p.min())


class PosedPolygon(NamedTuple):
    shape: ConvexPolygon
    pose: Pose2

    def world(self) -> np.ndarray:
        return self.shape.world(self.pose)


@dataclass(frozen=True)
class Mtv:
    """Minimum translation separating the second polygon from the first."""

    axis: tuple[float, float]
    depth: float

    def __post_init__(self):
        if self.depth <= 0.0:
            raise ValueError("MTV depth must be positive")
        if abs(math.hypot(*self.axis) - 1.0) > 1e-12:
            raise ValueError("MTV axis must be a unit vector")


# --------------------------------------------------------------------------
# numba kernels shared with the physics and kinematics modules


@njit(cache=True)
def transform_points(local, x, y, theta):
    c = math.cos(theta)
    s = math.sin(theta)
    out = np.empty_like(local)
    for k in range(local.shape[0]):
        px = local[k, 0]
        py = local[k, 1]
        out[k, 0] = x + c * px - s * py
        out[k, 1] = y + s * px + c * py
    return out


@njit(cache=True)
def _scan_axes(P, A, B, best, bx, by):
    # Edge normals of P as candidate axes; normal sign points from A to B.
    n = P.shape[0]
    for k in range(n):
        k2 = k + 1 if k + 1 < n else 0
        ex = P[k2, 0] - P[k, 0]
        ey = P[k2, 1] - P[k, 1]
        norm = math.sqrt(ex * ex + ey * ey)
        if norm == 0.0:
            continue
        nx = ey / norm
        ny = -ex / norm
        amin = math.inf
        amax = -math.inf
        for i in range(A.shape[0]):
            d = A[i, 0] * nx + A[i, 1] * ny
            if d < amin:
                amin = d
            if d > amax:
                amax = d
        bmin = math.inf
        bmax = -math.inf
        for i in range(B.shape[0]):
            d = B[i, 0] * nx + B[i, 1] * ny
            if d < bmin:
                bmin = d
            if d > bmax:
                bmax = d
        o1 = amax - bmin
        o2 = bmax - amin
        if o1 <= 0.0 or o2 <= 0.0:
            return min(o1, o2), 0.0, 0.0, True
        if o1 < best:
            best = o1
            bx = nx
            by = ny
        if o2 < best:
            best = o2
            bx = -nx
            by = -ny
    return best, bx, by, False


@njit(cache=True)
def sat_overlap(A, B):
    """Separating-axis test on world vertex arrays.

    Returns ``(overlap, nx, ny)``.  ``overlap <= 0`` means separated or
    touching; otherwise ``(nx, ny)`` is the unit axis along which ``B`` must
    move by ``overlap`` to clear ``A``.
    """
    best, bx, by, sep = _scan_axes(A, A, B, math.inf, 0.0, 0.0)
    if sep:
        return best, 0.0, 0.0
    best, bx, by, sep = _scan_axes(B, A, B, best, bx, by)
    if sep:
        return best, 0.0, 0.0
    return best, bx, by


# --------------------------------------------------------------------------
# public queries


def intersect(a: PosedPolygon, b: PosedPolygon) -> Optional[Mtv]:
    """MTV moving ``b`` out of ``a``, or None when disjoint or merely touching."""
    depth, nx, ny = sat_overlap(a.world(), b.world())
    if depth <= TOUCH_EPS:
        return None
    return Mtv((float(nx), float(ny)), float(depth))


def _support(points: np.ndarray, d: np.ndarray) -> np.ndarray:
    return points[int(np.argmax(points @ d))]


def _closest_on_segment(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    # Closest point to the origin on segment ab, with its barycentric weight on b.
    ab = b - a
    denom = float(ab @ ab)
    if denom <= 0.0:
        return a, 0.0
    t = min(1.0, max(0.0, -float(a @ ab) / denom))
    return a + t * ab, t


def gjk_distance(p: np.ndarray, q: np.ndarray, max_iter: int = 64) -> float:
    """Euclidean distance between the convex hulls of two point sets."""
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    q = np.asarray(q, dtype=float).reshape(-1, 2)
    d = q.mean(axis=0) - p.mean(axis=0)
    if not d.any():
        d = np.array([1.0, 0.0])
    simplex = [_support(p, d) - _support(q, -d)]
    x = simplex[0]
    for _ in range(max_iter):
        dist2 = float(x @ x)
        if dist2 <= 1e-24:
            return 0.0
        w = _support(p, -x) - _support(q, x)
        # No support point beyond the current closest point: converged.
        if dist2 - float(x @ w) <= 1e-12 * max(dist2, 1.0):
            return math.sqrt(dist2)
        simplex.append(w)
        if len(simplex) == 2:
            x, t = _closest_on_segment(simplex[0], simplex[1])
            if t <= 0.0:
                simplex = [simplex[0]]
            elif t >= 1.0:
                simplex = [simplex[1]]
        else:
            a, b, c = simplex
            # Origin inside the triangle: hulls overlap.
            s1, s2, s3 = _cross(a, b, (0, 0)), _cross(b, c, (0, 0)), _cross(c, a, (0, 0))
            if (s1 >= 0 and s2 >= 0 and s3 >= 0) or (s1 <= 0 and s2 <= 0 and s3 <= 0):
                return 0.0
            best = None
            for e0, e1 in ((a, b), (b, c), (a, c)):
                pt, t = _closest_on_segment(e0, e1)
                dd = float(pt @ pt)
                if best is None or dd < best[0]:
                    keep = [e0] if t <= 0.0 else [e1] if t >= 1.0 else [e0, e1]
                    best = (dd, pt, keep)
            x, simplex = best[1], best[2]
    return math.sqrt(float(x @ x))


def distance(a: PosedPolygon, b: PosedPolygon) -> float:
    """Separation of two posed polygons; 0 when touching or overlapping."""
    wa, wb = a.world(), b.world()
    depth, _, _ = sat_overlap(wa, wb)
    if depth >= 0.0:
        return 0.0
    return gjk_distance(wa, wb)


def hull_distance(p, q) -> float:
    """Distance between two (possibly degenerate) CCW hulls given as point arrays."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if len(p) >= 3 and len(q) >= 3:
        depth, _, _ = sat_overlap(p, q)
        if depth >= 0.0:
            return 0.0
    return gjk_distance(p, q)


def simplify(shape: ConvexPolygon, rate: float) -> ConvexPolygon:
    """Resolution reduction by vertex subsampling.

    Keeps ``max(3, ceil(rate * n))`` of the original vertices, the ones
    closest to evenly spaced stations along the perimeter starting at
    vertex 0, then re-centers the result on its area centroid.  Keeping a
    vertex subset means the reduced shape lies inside the original.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"reduction rate must lie in (0, 1], got {rate}")
    V = shape.vertices
    n = len(V)
    keep = max(3, math.ceil(rate * n - 1e-9))
    if keep >= n:
        return shape
    edges = np.linalg.norm(np.roll(V, -1, axis=0) - V, axis=1)
    arc = np.concatenate(([0.0], np.cumsum(edges)[:-1]))
    perimeter = float(edges.sum())
    idx: list[int] = []
    for j in range(keep):
        station = perimeter * j / keep
        i = int(np.argmin(np.abs(arc - station)))
        # Strictly increasing indices with room left for the remaining stations.
        lo = idx[-1] + 1 if idx else 0
        i = min(max(i, lo), n - (keep - j))
        idx.append(i)
    v = V[idx]
    _, c = polygon_area_centroid(v)
    return ConvexPolygon(v - c)


def point_in_rect(px: float, py: float, frame: Pose2, half_x: float, half_y: float) -> bool:
    """Whether a world point lies in a rectangle centered on ``frame`` (boundary inclusive)."""
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    dx, dy = px - frame.x, py - frame.y
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return abs(lx) <= half_x and abs(ly) <= half_y


def as_points(seq: Sequence) -> np.ndarray:
    return np.asarray(seq, dtype=float).reshape(-1, 2)
