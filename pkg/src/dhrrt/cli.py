"""Command line entry point: ``dhrrt run|sweep|render|validate``."""
from __future__ import annotations

import argparse
import ast
import csv
import itertools
import os
import sys
from pathlib import Path

from .harness.emit import render_svg, render_trace, summary_line, write_csv, write_text
from .harness.executor import read_trace
from .harness.experiment import PLANNERS, ExperimentSpec, run_experiment
from .harness.scenario import ScenarioError, load_scenario, resolve_scenario_path

OUT_ENV = "DHRRT_OUT_DIR"


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "results"))


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        try:
            out[key] = ast.literal_eval(val)
        except (ValueError, SyntaxError):
            out[key] = val
    return out


def _opt_float(s: str):
    return None if s.lower() in ("none", "off", "") else float(s)


def _float_list(s: str) -> list:
    return [_opt_float(v) for v in s.split(",")]


def _common(p: argparse.ArgumentParser, grid: bool = False) -> None:
    p.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="seed base; trial k uses seed + k")
    p.add_argument("--budget", type=float, default=60.0, help="planning time budget per trial (s)")
    p.add_argument("--perturb-speed", type=float, default=0.4)
    p.add_argument("--clock", choices=("sim", "wall"), default="sim")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="planner setting override")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    if grid:
        p.add_argument("--planner", default=",".join(PLANNERS), help="comma list of planners")
        p.add_argument("--perturb-interval", type=_float_list, default=[None], help="comma list; 'none' = off")
        p.add_argument("--reduce-rate", type=_float_list, default=[None], help="comma list; 'none' = exact")
    else:
        p.add_argument("--planner", choices=PLANNERS, default="dhrrt")
        p.add_argument("--perturb-interval", type=_opt_float, default=None, help="seconds between shoves")
        p.add_argument("--reduce-rate", type=_opt_float, default=None, help="planner polygon reduction")
        p.add_argument("--trace", action="store_true", help="write one JSONL trace and SVG per trial")


def _tag(x) -> str:
    return "none" if x is None else f"{x:g}"


def cmd_run(args) -> int:
    spec = ExperimentSpec(args.scenario, args.planner, args.trials, args.seed, args.budget, args.perturb_interval,
                          args.perturb_speed, reduce_rate=args.reduce_rate, overrides=_overrides(args.set),
                          clock=args.clock)
    sc = spec.load()
    out = _out_dir(args)
    stem = f"{sc.name}_{args.planner}_pi-{_tag(args.perturb_interval)}_rr-{_tag(args.reduce_rate)}"
    tdir = out / f"{stem}_traces" if args.trace else None
    records, summary = run_experiment(spec, trace_dir=tdir)
    path = write_csv(records, out / f"{stem}.csv")
    if tdir is not None:
        for f in sorted(tdir.glob("*.jsonl")):
            write_text(render_trace(list(read_trace(f))), f.with_suffix(".svg"))
    print(summary_line(stem, summary))
    print(f"wrote {path}")
    return 0


def cmd_sweep(args) -> int:
    planners = [p.strip() for p in args.planner.split(",") if p.strip()]
    for p in planners:
        if p not in PLANNERS:
            raise SystemExit(f"unknown planner {p!r}; choose from {', '.join(PLANNERS)}")
    sc = load_scenario(resolve_scenario_path(args.scenario))
    out = _out_dir(args)
    rows = []
    for pi, rr, planner in itertools.product(args.perturb_interval, args.reduce_rate, planners):
        spec = ExperimentSpec(sc, planner, args.trials, args.seed, args.budget, pi, args.perturb_speed,
                              reduce_rate=rr, overrides=_overrides(args.set), clock=args.clock)
        records, s = run_experiment(spec)
        stem = f"{sc.name}_{planner}_pi-{_tag(pi)}_rr-{_tag(rr)}"
        write_csv(records, out / f"{stem}.csv")
        print(summary_line(stem, s), flush=True)
        rows.append([planner, _tag(pi), _tag(rr), s.trials, s.successes, f"{s.success_rate:.6f}",
                     f"{s.time_mean:.6f}", f"{s.time_std:.6f}", f"{s.nodes_per_s:.6f}"])
    path = out / f"{sc.name}_sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["planner", "perturb_interval", "reduce_rate", "trials", "successes", "success_rate",
                    "time_mean_s", "time_std_s", "nodes_per_s"])
        w.writerows(rows)
    print(f"wrote {path}")
    return 0


def cmd_render(args) -> int:
    if args.trace:
        svg = render_trace(list(read_trace(args.trace)), args.which)
        default = Path(args.trace).with_suffix(".svg")
    else:
        sc = load_scenario(resolve_scenario_path(args.scenario))
        svg = render_svg(sc, sc.joints, [o.pose.as_array() for o in sc.objects])
        default = _out_dir(args) / f"{sc.name}.svg"
    path = write_text(svg, args.svg or default)
    print(f"wrote {path}")
    return 0


def cmd_validate(args) -> int:
    bad = 0
    for name in args.scenario:
        try:
            sc = load_scenario(resolve_scenario_path(name))
        except ScenarioError as e:
            print(f"INVALID {e}")
            bad += 1
        else:
            print(f"OK {name}: {sc.n_objects} objects, task {sc.task_spec['kind']}")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dhrrt", description="Rearrangement planning experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one seeded batch")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid over planner x perturbation interval x reduction rate")
    _common(p, grid=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render", help="render a trace (or a scenario's start state) to SVG")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--trace", help="JSONL trace file")
    g.add_argument("--scenario", help="scenario file or bundled name")
    p.add_argument("--which", choices=("start", "end"), default="end")
    p.add_argument("--svg", help="output file")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate", help="check scenario files")
    p.add_argument("--scenario", nargs="+", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
