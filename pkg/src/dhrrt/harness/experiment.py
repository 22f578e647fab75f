"""Seeded batch runs: one planner, one scenario, many trials."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, TextIO

import numpy as np

from ..physics import SystemState
from ..planner import PlannerConfig, plan_dhrrt, plan_kdrrt
from .executor import SimExecutor, TraceWriter
from .scenario import Scenario, load_scenario, resolve_scenario_path

PLANNERS = ("kdrrt", "rkdrrt", "dhrrt")


@dataclass
class ExperimentSpec:
    scenario: object                     # path, bundled name, or a Scenario
    planner: str = "dhrrt"
    trials: int = 1
    seed: int = 0
    time_budget: float = 60.0
    perturb_interval: Optional[float] = None
    perturb_speed: float = 0.4
    perturb_duration: float = 0.1
    reduce_rate: Optional[float] = None
    overrides: dict = field(default_factory=dict)
    clock: str = "sim"

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise ValueError(f"planner must be one of {', '.join(PLANNERS)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.time_budget > 0:
            raise ValueError("time budget must be positive")
        if self.perturb_interval is not None and not self.perturb_interval > 0:
            raise ValueError("perturbation interval must be positive")
        if self.perturb_speed < 0:
            raise ValueError("perturbation speed must be non-negative")
        if self.reduce_rate is not None and not 0 < self.reduce_rate <= 1:
            raise ValueError("reduce rate must lie in (0, 1]")

    def load(self) -> Scenario:
        if isinstance(self.scenario, Scenario):
            return self.scenario
        return load_scenario(resolve_scenario_path(self.scenario))


@dataclass
class MetricsRecord:
    trial: int
    planner: str
    seed: int
    success: bool
    planning_time_s: float
    nodes_added: int
    replans: int
    segments_executed: int
    perturbations: int = 0
    final_state: Optional[SystemState] = field(default=None, repr=False, compare=False)
    horizon_log: list = field(default_factory=list, repr=False, compare=False)

    @property
    def nodes_per_s(self) -> float:
        return self.nodes_added / self.planning_time_s if self.planning_time_s > 0 else 0.0


@dataclass(frozen=True)
class BatchSummary:
    trials: int
    successes: int
    success_rate: float
    time_mean: float
    time_std: float
    nodes_per_s: float
    replans_mean: float


def trial_seeds(seed_base: int, k: int) -> tuple[int, int, int]:
    """(trial seed, planner seed, executor seed) for trial ``k``."""
    trial_seed = seed_base + k
    ps, es = np.random.SeedSequence(trial_seed).spawn(2)
    return trial_seed, int(ps.generate_state(1)[0]), int(es.generate_state(1)[0])


def planner_config(spec: ExperimentSpec, sc: Scenario, seed: int) -> PlannerConfig:
    kw = dict(sc.planner_defaults)
    kw.update(spec.overrides)
    kw.update(time_budget=spec.time_budget, seed=seed, clock=spec.clock)
    return PlannerConfig(**kw)


def run_trial(spec: ExperimentSpec, sc: Scenario, k: int, trace: Optional[TextIO] = None) -> MetricsRecord:
    trial_seed, pseed, eseed = trial_seeds(spec.seed, k)
    true_world = sc.world()
    model = sc.planner_world(spec.reduce_rate)
    task = sc.task()
    writer = None
    if trace is not None:
        writer = TraceWriter(trace)
        writer.header(sc.to_dict(), reduce_rate=spec.reduce_rate, planner=spec.planner, seed=trial_seed)
    ex = SimExecutor(true_world, sc.start_state(true_world), np.random.default_rng(eseed),
                     spec.perturb_interval, spec.perturb_speed, spec.perturb_duration, writer)
    cfg = planner_config(spec, sc, pseed)
    if spec.planner == "dhrrt":
        out = plan_dhrrt(model, task, cfg, ex)
    else:
        out = plan_kdrrt(model, task, cfg, ex, replanning=spec.planner == "rkdrrt")
    ex.finish()
    final = ex.state
    return MetricsRecord(k, spec.planner, trial_seed, bool(task.goal(final, true_world)), out.planning_time,
                         out.nodes_added, out.replans, len(out.executed_controls), ex.perturbations,
                         final, out.horizon_log)


def summarize(records: list[MetricsRecord], sc: Optional[Scenario] = None) -> BatchSummary:
    """Aggregate a batch; with ``sc`` given, success flags are re-checked on the final states."""
    if not records:
        raise ValueError("no records to summarize")
    if sc is not None:
        world, task = sc.world(), sc.task()
        for r in records:
            if r.final_state is not None and bool(task.goal(r.final_state, world)) != r.success:
                raise AssertionError(f"trial {r.trial}: success flag disagrees with the goal test")
    ok = [r.planning_time_s for r in records if r.success]
    total_t = sum(r.planning_time_s for r in records)
    total_n = sum(r.nodes_added for r in records)
    return BatchSummary(
        trials=len(records),
        successes=len(ok),
        success_rate=len(ok) / len(records),
        time_mean=float(np.mean(ok)) if ok else math.nan,
        time_std=float(np.std(ok)) if ok else math.nan,
        nodes_per_s=total_n / total_t if total_t > 0 else 0.0,
        replans_mean=float(np.mean([r.replans for r in records])),
    )


def run_experiment(spec: ExperimentSpec, trace_dir: Optional[Path] = None):
    """Run every trial; returns ``(records, summary)``.  Trial failures never abort the batch."""
    sc = spec.load()
    records = []
    for k in range(spec.trials):
        if trace_dir is not None:
            Path(trace_dir).mkdir(parents=True, exist_ok=True)
            with open(Path(trace_dir) / f"trace_{spec.planner}_{k:03d}.jsonl", "w") as fh:
                records.append(run_trial(spec, sc, k, fh))
        else:
            records.append(run_trial(spec, sc, k))
    return records, summarize(records, sc)


def with_changes(spec: ExperimentSpec, **kw) -> ExperimentSpec:
    return dataclasses.replace(spec, **kw)
