"""Generator for the bundled scenario files.

The YAML files under ``dhrrt/scenarios`` are produced by :func:`write_library`;
regenerate them with ``python3 -m dhrrt.harness.library``.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..geometry import Pose2
from ..kinematics import ArmModel, solve_ik
from .scenario import BUILTIN_DIR, scenario_from_dict

WORKSPACE = [-0.45, 0.45, 0.2, 1.0]
# Grasp scenes sit on a table wider than the arm can reach, so the arm alone
# cannot push objects off it while chasing the target.
GRASP_WORKSPACE = [-0.7, 0.7, 0.1, 1.25]
LINKS = [0.4, 0.35, 0.25, 0.12]
LIMITS = [[-2.9, 2.9]] * 4
BASE = [0.0, 0.0, math.pi / 2]
START_TCP = Pose2(0.0, 0.32, math.pi / 2)
IK_SEED = [-1.4, 1.9, 1.5, -2.0]
CUBE = 0.05
# Tuned on 10-trial batches of grasp_reduce and grasp_perturb16.
GRASP_PLANNER = {"p": 0.03, "goal_bias": 0.1}


def _start_joints() -> list[float]:
    arm = ArmModel(Pose2(*BASE), tuple(LINKS), tuple(map(tuple, LIMITS)))
    q = solve_ik(arm, START_TCP, IK_SEED)
    return [round(float(v), 12) for v in q]


def _base_doc(name: str) -> dict:
    return {
        "name": name,
        "workspace": list(WORKSPACE),
        "arm": {"base": list(BASE), "link_lengths": list(LINKS), "joint_limits": [list(p) for p in LIMITS],
                "joints": _start_joints()},
        "shapes": {"cube": {"box": [CUBE, CUBE]}},
        "obstacles": [],
        "objects": [],
    }


def _r(x: float) -> float:
    return round(float(x), 4)


def _scatter(rng, n: int, first, region, min_gap: float) -> list[list[float]]:
    """Rejection-sample ``n`` poses; the first pose is fixed."""
    poses = [list(first)]
    xlo, xhi, ylo, yhi = region
    while len(poses) < n:
        x, y = rng.uniform(xlo, xhi), rng.uniform(ylo, yhi)
        if all(math.hypot(x - p[0], y - p[1]) >= min_gap for p in poses):
            poses.append([_r(x), _r(y), _r(rng.uniform(-math.pi / 4, math.pi / 4))])
    return poses


def _clutter(name: str, n: int, seed: int, region, min_gap: float) -> dict:
    doc = _base_doc(name)
    rng = np.random.default_rng(seed)
    cx, cy = (region[0] + region[1]) / 2, (region[2] + region[3]) / 2
    for pose in _scatter(rng, n, [_r(cx), _r(cy), 0.0], region, min_gap):
        doc["objects"].append({"shape": "cube", "pose": pose})
    return doc


def grasp_clutter(n: int, seed: int = 7, region=(-0.2, 0.2, 0.44, 0.7), min_gap: float = 0.075) -> dict:
    doc = _clutter(f"grasp_n{n}", n, seed, region, min_gap)
    doc["task"] = {"kind": "grasp", "target": 0}
    doc["workspace"] = list(GRASP_WORKSPACE)
    doc["planner"] = dict(GRASP_PLANNER)
    return doc


def relocate_clutter(n: int, seed: int = 11, region=(-0.2, 0.2, 0.44, 0.7), min_gap: float = 0.075) -> dict:
    doc = _clutter(f"relocate_n{n}", n, seed, region, min_gap)
    doc["task"] = {"kind": "relocate", "target": 0, "goal_center": [0.22, 0.45], "goal_radius": 0.1}
    doc["planner"] = {"p": 0.05}
    return doc


def sort_scatter(seed: int = 3) -> dict:
    """Six cubes scattered over the clutter region, labels alternating red/blue."""
    doc = _clutter("sort_6", 6, seed, (-0.2, 0.2, 0.44, 0.7), 0.075)
    for k, obj in enumerate(doc["objects"]):
        obj["label"] = "blue" if k % 2 else "red"
    doc["task"] = {"kind": "sort", "eps_d": 0.1}
    doc["planner"] = {"duration": 0.4, "p": 0.02}
    return doc


def sort_checkerboard() -> dict:
    """Tightly packed 3x2 checkerboard; a much harder start for the sorting heuristic."""
    doc = _base_doc("sort_6_checker")
    xs, ys = (-0.07, 0.0, 0.07), (0.52, 0.59)
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            doc["objects"].append({"shape": "cube", "pose": [x, y, 0.0], "label": "blue" if (i + j) % 2 else "red"})
    doc["task"] = {"kind": "sort", "eps_d": 0.1}
    doc["planner"] = {"duration": 0.4, "p": 0.02}
    return doc


def perturbation_grasp() -> dict:
    doc = grasp_clutter(16, seed=3, region=(-0.18, 0.18, 0.44, 0.7), min_gap=0.072)
    doc["name"] = "grasp_perturb16"
    return doc


def _blob(n: int, a: float, b: float) -> list[list[float]]:
    """Centrally symmetric n-gon on a superellipse, rounded to 6 decimals."""
    pts = []
    for k in range(n):
        t = 2 * math.pi * k / n
        c, s = math.cos(t), math.sin(t)
        pts.append([round(a * math.copysign(abs(c) ** 0.6, c), 6), round(b * math.copysign(abs(s) ** 0.6, s), 6)])
    return pts


def reduction_grasp() -> dict:
    doc = _base_doc("grasp_reduce")
    doc["shapes"]["blob"] = {"points": _blob(200, 0.05, 0.035)}
    doc["shapes"]["disc"] = {"regular": [200, 0.04]}
    doc["objects"] = [
        {"shape": "cube", "pose": [0.0, 0.57, 0.0]},
        {"shape": "blob", "pose": [-0.085, 0.57, 0.0]},
        {"shape": "blob", "pose": [0.085, 0.57, 0.0]},
        {"shape": "disc", "pose": [0.0, 0.48, 0.0]},
        {"shape": "disc", "pose": [0.0, 0.66, 0.0]},
    ]
    doc["task"] = {"kind": "grasp", "target": 0}
    doc["workspace"] = list(GRASP_WORKSPACE)
    doc["planner"] = dict(GRASP_PLANNER)
    return doc


def build_library() -> dict[str, dict]:
    docs = [
        grasp_clutter(10), grasp_clutter(20, region=(-0.24, 0.24, 0.43, 0.73), min_gap=0.07),
        relocate_clutter(10), relocate_clutter(20, region=(-0.24, 0.24, 0.43, 0.73), min_gap=0.07),
        sort_scatter(), sort_checkerboard(), perturbation_grasp(), reduction_grasp(),
    ]
    return {d["name"]: d for d in docs}


def write_library(out_dir: Path = BUILTIN_DIR) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, doc in build_library().items():
        sc = scenario_from_dict(doc)
        paths.append(sc.save(out_dir / f"{name}.yaml"))
    return paths


if __name__ == "__main__":
    for p in write_library():
        print(p)
