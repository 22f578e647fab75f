"""CSV tables and SVG scene renders."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from ..geometry import transform_points
from ..kinematics import gripper_polygons
from .experiment import MetricsRecord
from .scenario import Scenario

CSV_COLUMNS = ("trial", "planner", "seed", "success", "planning_time_s", "nodes_added", "nodes_per_s",
               "replans", "segments_executed")


def csv_text(records: Sequence[MetricsRecord]) -> str:
    if not records:
        raise ValueError("no records to write")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.trial, r.planner, r.seed, int(r.success), f"{r.planning_time_s:.6f}", r.nodes_added,
                    f"{r.nodes_per_s:.6f}", r.replans, r.segments_executed])
    return buf.getvalue()


def write_csv(records: Sequence[MetricsRecord], path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(csv_text(records))
    except OSError as e:
        raise OSError(f"{path}: {e.strerror}") from e
    return path


def summary_line(label: str, s) -> str:
    t = "n/a" if s.successes == 0 else f"{s.time_mean:.2f}±{s.time_std:.2f}s"
    return (f"{label}: success {s.successes}/{s.trials} ({100 * s.success_rate:.0f}%), "
            f"time {t}, {s.nodes_per_s:.2f} nodes/s")


# --------------------------------------------------------------------------
# svg

CLASS_COLORS = ("#3a6fd8", "#d8443a", "#3aa55a", "#d89a3a", "#8a4ad8", "#3ab5c0")
NEUTRAL = "#c9a66b"
TARGET = "#f2c200"
OBSTACLE = "#8c8c8c"


def _pts(P: np.ndarray, tf) -> str:
    return " ".join(f"{x:.5f},{y:.5f}" for x, y in (tf(p) for p in P))


def render_svg(sc: Scenario, joints, objects, path_xy: Optional[Iterable] = None, width: int = 600) -> str:
    """Top-down view: workspace, obstacles, objects by class, gripper, executed TCP path."""
    ws = sc.workspace
    scale = width / (ws.xmax - ws.xmin)
    height = int(round((ws.ymax - ws.ymin) * scale))

    def tf(p):
        return (p[0] - ws.xmin) * scale, (ws.ymax - p[1]) * scale

    labels = sorted({o.label for o in sc.objects if o.label is not None})
    color = {lbl: CLASS_COLORS[i % len(CLASS_COLORS)] for i, lbl in enumerate(labels)}
    target = sc.target_index
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="#f7f5ef" stroke="#333" stroke-width="2"/>']
    for k, ob in enumerate(sc.obstacle_polygons()):
        out.append(f'<polygon id="obstacle-{k}" points="{_pts(ob.world(), tf)}" fill="{OBSTACLE}" stroke="#555"/>')
    shapes = sc.true_shapes()
    objects = np.asarray(objects, dtype=float).reshape(-1, 3)
    for i, (shape, (x, y, th)) in enumerate(zip(shapes, objects)):
        o = sc.objects[i]
        fill = color.get(o.label, NEUTRAL)
        stroke, sw = ("#000", 1)
        if i == target:
            fill, stroke, sw = TARGET, "#a00", 3
        title = escape(o.label or f"object {i}")
        out.append(f'<polygon id="object-{i}" points="{_pts(transform_points(shape.vertices, x, y, th), tf)}" '
                   f'fill="{fill}" stroke="{stroke}" stroke-width="{sw}"><title>{title}</title></polygon>')
    if path_xy is not None:
        pts = [tf(p) for p in path_xy]
        if len(pts) > 1:
            d = " ".join(f"{'M' if k == 0 else 'L'}{x:.5f},{y:.5f}" for k, (x, y) in enumerate(pts))
            out.append(f'<path id="executed-path" d="{d}" fill="none" stroke="#2a2" stroke-width="1.5" '
                       f'stroke-dasharray="4 2"/>')
    g = " ".join("M" + " L".join(f"{x:.5f},{y:.5f}" for x, y in (tf(p) for p in P)) + " Z"
                 for P in gripper_polygons(sc.arm, joints))
    out.append(f'<path id="gripper" d="{g}" fill="#444" fill-opacity="0.8" stroke="#111"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_trace(records: list[dict], which: str = "end") -> str:
    """SVG of a trace's start or end state with the executed gripper path."""
    from .scenario import scenario_from_dict

    head = records[0]
    sc = scenario_from_dict(head["scenario"])
    states = [r for r in records if r["type"] in ("state", "end")]
    snap = states[0] if which == "start" or len(states) == 1 else states[-1]
    path = [r["gripper"][:2] for r in records if r["type"] in ("state", "substep")]
    return render_svg(sc, snap["joints"], snap["objects"], path)


def write_text(text: str, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise OSError(f"{path}: {e.strerror}") from e
    return path
