"""Simulated execution: the true-shape world plus random shoves, with optional tracing.

Trace files are JSON lines.  Every line is an object with a ``type`` field:

``header``
    ``scenario`` (the scenario document), ``reduce_rate``, ``planner``, ``seed``.
``state``
    ``t``, ``joints``, ``gripper`` [x, y, theta], ``objects`` [[x, y, theta], ...], ``valid``.
    Written once at the start.
``segment``
    ``t``, ``dt``, ``twist`` [vx, vy, omega, duration], ``velocities`` (one row per substep).
    The joint-velocity rows actually sent to the robot; a long segment is
    split where a shove falls inside it.
``substep``
    ``t``, ``joints``, ``gripper``, ``objects``, ``contacts`` ([a, b] pairs, where
    -1 is the gripper, -2-k obstacle k, and non-negative ids are objects).
``perturb``
    ``t``, ``object``, ``heading``, ``speed``, ``duration``.
``end``
    ``t`` and the final ``joints``, ``gripper``, ``objects``, ``valid``.

Replaying the ``segment`` and ``perturb`` lines in order through the same
physics reproduces the ``end`` state exactly (see :func:`replay_trace`).
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import IO, Iterator, Optional

import numpy as np

from ..kinematics import ControlSegment, Twist
from ..physics import StepRecord, SystemState, World


def _f(x) -> list:
    return np.asarray(x, dtype=float).tolist()


def _state_fields(q: SystemState) -> dict:
    g = q.gripper
    return {"joints": _f(q.joints), "gripper": [g.x, g.y, g.theta], "objects": _f(q.objects),
            "valid": bool(q.valid)}


class TraceWriter:
    def __init__(self, stream: IO[str]):
        self.stream = stream

    def write(self, kind: str, **data) -> None:
        self.stream.write(json.dumps({"type": kind, **data}, separators=(",", ":")) + "\n")

    def header(self, scenario: dict, **meta) -> None:
        self.write("header", scenario=scenario, **meta)

    def state(self, t: float, q: SystemState, kind: str = "state") -> None:
        self.write(kind, t=t, **_state_fields(q))

    def segment(self, t: float, seg: ControlSegment) -> None:
        v = seg.source_twist
        self.write("segment", t=t, dt=seg.dt, twist=[v.vx, v.vy, v.omega, v.duration],
                   velocities=_f(seg.velocities))

    def substeps(self, t0: float, dt: float, rec: StepRecord) -> None:
        by_step: dict[int, list] = {}
        for k, a, b in rec.contacts:
            pair = [a, b]
            lst = by_step.setdefault(k, [])
            if pair not in lst:
                lst.append(pair)
        for k in range(1, len(rec.joints)):
            self.write("substep", t=t0 + k * dt, joints=_f(rec.joints[k]), gripper=_f(rec.gripper[k]),
                       objects=_f(rec.objects[k]), contacts=by_step.get(k - 1, []))

    def perturb(self, t: float, i: int, heading: float, speed: float, duration: float) -> None:
        self.write("perturb", t=t, object=i, heading=heading, speed=speed, duration=duration)


class SimExecutor:
    """Executes joint-space segments in the true world.

    When ``perturb_interval`` is set, one uniformly chosen object is shoved
    at ``perturb_speed`` along a random heading each time that much execution
    time has elapsed.  Execution stops early when the gripper jams or the
    state becomes invalid.  Time is kept as an integer substep count so
    shove instants are exact.
    """

    def __init__(self, world: World, start: SystemState, rng: Optional[np.random.Generator] = None,
                 perturb_interval: Optional[float] = None, perturb_speed: float = 0.4,
                 perturb_duration: float = 0.1, trace: Optional[TraceWriter] = None):
        if perturb_interval is not None and perturb_interval <= 0:
            raise ValueError("perturbation interval must be positive")
        self.world = world
        self.state = start
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dt = world.cfg.substep
        self.period = None if perturb_interval is None else max(1, round(perturb_interval / self.dt))
        self.speed = perturb_speed
        self.duration = perturb_duration
        self.trace = trace
        self.ticks = 0
        self.segments = 0
        self.perturbations = 0
        self.jams = 0
        if trace is not None:
            trace.state(0.0, start)

    @property
    def time(self) -> float:
        return self.ticks * self.dt

    def observe(self) -> SystemState:
        return self.state

    def _shove(self) -> None:
        q, (i, heading) = self.world.perturb(self.state, self.rng, self.speed, self.duration)
        self.perturbations += 1
        if self.trace is not None:
            self.trace.perturb(self.time, i, heading, self.speed, self.duration)
        self.state = q

    def _run_piece(self, seg: ControlSegment) -> bool:
        t0 = self.time
        if self.trace is not None:
            self.trace.segment(t0, seg)
        q, completed, rec = self.world.apply_segment(self.state, seg, stop_on_jam=True,
                                                     record=self.trace is not None)
        self.ticks += self.world.last_completed if q.valid else len(seg)
        if self.trace is not None and rec is not None:
            self.trace.substeps(t0, self.dt, rec)
        self.state = q
        if not completed and q.valid:
            self.jams += 1
        return completed and q.valid

    def execute(self, controls: list) -> SystemState:
        for seg in controls:
            self.segments += 1
            start = 0
            n = len(seg)
            while start < n:
                stop = n
                if self.period is not None:
                    stop = min(n, start + self.period - self.ticks % self.period)
                piece = seg if (start == 0 and stop == n) else \
                    ControlSegment(seg.velocities[start:stop], seg.dt, seg.source_twist)
                if not self._run_piece(piece):
                    return self.state
                start = stop
                if self.period is not None and self.ticks % self.period == 0:
                    self._shove()
                    if not self.state.valid:
                        return self.state
        return self.state

    def finish(self) -> None:
        if self.trace is not None:
            self.trace.state(self.time, self.state, kind="end")


class PerfectExecutor:
    """Executes in the planner's own model with no disturbances."""

    def __init__(self, world: World, start: SystemState):
        self.world = world
        self.state = start

    def observe(self) -> SystemState:
        return self.state

    def execute(self, controls: list) -> SystemState:
        for seg in controls:
            self.state, ok, _ = self.world.apply_segment(self.state, seg)
            if not ok:
                break
        return self.state


# --------------------------------------------------------------------------
# reading traces


def read_trace(path) -> Iterator[dict]:
    path = Path(path)
    try:
        with path.open() as fh:
            for n, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        yield json.loads(line)
                    except json.JSONDecodeError as e:
                        raise ValueError(f"{path}:{n}: malformed trace line ({e.msg})") from e
    except OSError as e:
        raise OSError(f"{path}: {e.strerror}") from e


def replay_trace(records: list[dict]):
    """Re-simulate a trace; returns ``(replayed_state, recorded_end_record)``."""
    from .scenario import scenario_from_dict

    head = records[0]
    if head.get("type") != "header":
        raise ValueError("trace does not start with a header line")
    sc = scenario_from_dict(head["scenario"])
    world = sc.world()
    q = sc.start_state(world)
    end = None
    for r in records[1:]:
        kind = r["type"]
        if kind == "segment":
            tw = Twist(*r["twist"])
            seg = ControlSegment(np.array(r["velocities"], dtype=float).reshape(-1, sc.arm.dof), r["dt"], tw)
            q, _, _ = world.apply_segment(q, seg, stop_on_jam=True)
        elif kind == "perturb":
            q = world.perturb_fixed(q, r["object"], r["heading"], r["speed"], r["duration"])
        elif kind == "end":
            end = r
    return q, end


def states_match(q: SystemState, rec: dict) -> bool:
    return (
        q.valid == rec["valid"]
        and np.array_equal(np.asarray(q.joints), np.asarray(rec["joints"], dtype=float))
        and np.array_equal(q.objects, np.asarray(rec["objects"], dtype=float).reshape(q.objects.shape))
        and all(math.isclose(a, b, rel_tol=0, abs_tol=0) for a, b in
                zip((q.gripper.x, q.gripper.y, q.gripper.theta), rec["gripper"]))
    )
