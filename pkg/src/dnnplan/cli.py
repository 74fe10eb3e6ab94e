"""Command-line entry point.

Subcommands: ``plan``, ``simulate``, ``oracle``, ``synthesize``, ``ablate``.
Exit codes: 0 ok, 1 input error, 2 infeasible, 3 oracle limits exceeded,
4 simulated latency above the analytic bound.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .dispatch import DispatchPolicy
from .io import dump_json, load_plan, load_workload, loads_json, plan_to_dict, workload_from_dict, workload_to_dict, write_atomic
from .model import AppDag, Infeasible, PlanningError
from .oracle import OracleLimitExceeded, OracleLimits, optimal_plan
from .pipeline import PlanOptions, plan_session
from .scheduler import SchedulerOptions
from .simulator import SimConfig, check_bound, simulate
from .splitter import SplitterOptions
from .synth import ORACLE_SIZED, SINGLE_MODULE, SynthOptions, synthesize

log = logging.getLogger("dnnplan")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_LIMITS, EXIT_BOUND = 0, 1, 2, 3, 4

# ablation variants: name -> (scheduler overrides, splitter overrides, extra)
VARIANTS: dict[str, tuple[dict, dict, dict]] = {
    "full": ({}, {}, {}),
    "rr-dispatch": ({"policy": DispatchPolicy.RR}, {}, {}),
    "dt-dispatch": ({"policy": DispatchPolicy.DT}, {}, {}),
    "1-config": ({"max_configs": 1}, {}, {}),
    "2-config": ({"max_configs": 2}, {}, {}),
    "no-dummy": ({"enable_dummy": False}, {}, {}),
    "no-reassign": ({"enable_reassign": False}, {}, {}),
    "split-even": ({}, {"method": "even"}, {}),
    "split-throughput": ({}, {"method": "throughput"}, {}),
    "split-quantized:0.1": ({}, {"method": "quantized", "step": 0.1}, {}),
    "split-quantized:0.01": ({}, {"method": "quantized", "step": 0.01}, {}),
    "no-merge": ({}, {"enable_merge": False}, {}),
    "no-cost-direct": ({}, {"cost_direct_r": 0}, {"cost_direct_auto": False}),
    "no-recombine": ({"enable_recombine": False}, {}, {}),
}


def _max_configs(text: str) -> Optional[int]:
    if text == "unlimited":
        return None
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'unlimited', got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("--max-configs must be >= 1")
    return n


def _split(text: str) -> tuple[str, float]:
    if text in ("lc", "throughput", "even"):
        return text, 0.01
    if text.startswith("quantized:"):
        try:
            step = float(text.split(":", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad quantized step in {text!r}") from None
        if not step > 0:
            raise argparse.ArgumentTypeError("quantized step must be positive")
        return "quantized", step
    raise argparse.ArgumentTypeError(f"unknown split {text!r}")


def _cost_direct(text: str) -> Optional[int]:
    # None means "auto"
    if text == "auto":
        return None
    if text == "off":
        return 0
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N, 'auto' or 'off', got {text!r}") from None
    if n < 0:
        raise argparse.ArgumentTypeError("--cost-direct-r must be >= 0")
    return n


def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("planner options")
    g.add_argument("--policy", choices=["tc", "rr", "dt"], default=None, help="dispatch policy (default tc)")
    g.add_argument("--max-configs", type=_max_configs, default=None, metavar="{N,unlimited}")
    g.add_argument("--no-dummy", action="store_true", help="disable dummy padding")
    g.add_argument("--no-reassign", action="store_true", help="disable slack reassignment")
    g.add_argument("--no-recombine", action="store_true", help="disable cross-module budget recombination")
    g.add_argument("--split", type=_split, default=("lc", 0.01), metavar="{lc,throughput,quantized:<step>,even}")
    g.add_argument("--no-merge", action="store_true", help="do not merge parallel branches while splitting")
    g.add_argument("--cost-direct-r", type=_cost_direct, default=3, metavar="{N,auto,off}")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", type=Path, default=None, metavar="DIR")
    g.add_argument("--json", action="store_true", help="machine-readable report on stdout")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def plan_options(args: argparse.Namespace, policy: Optional[str] = None) -> PlanOptions:
    method, step = args.split
    sched = SchedulerOptions(
        policy=DispatchPolicy.parse(policy or args.policy or "tc"),
        max_configs=args.max_configs,
        enable_dummy=not args.no_dummy,
        enable_reassign=not args.no_reassign,
        enable_recombine=not args.no_recombine,
    )
    auto = args.cost_direct_r is None
    split = SplitterOptions(method=method, step=step, enable_merge=not args.no_merge,
                            cost_direct_r=3 if auto else args.cost_direct_r)
    return PlanOptions(scheduler=sched, splitter=split, cost_direct_auto=auto)


def _emit(args: argparse.Namespace, report: dict, text: str) -> None:
    sys.stdout.write(dump_json(report) if args.json else text)


def _plan_text(name: str, plan_dict: dict, runtime_ms: float) -> str:
    lines = [f"{name}: cost {plan_dict['total_cost']:.6g}, e2e {plan_dict['e2e_latency']:.6g}s, "
             f"policy {plan_dict['policy']}, {runtime_ms:.2f} ms"]
    for m, s in plan_dict["modules"].items():
        lines.append(f"  {m}: {s['notation']}  budget {plan_dict['budgets'][m]:.6g}  wcl {s['wcl']:.6g}  "
                     f"dummy {s['dummy_rate']:.6g}  cost {s['cost']:.6g}")
    return "\n".join(lines) + "\n"


def cmd_plan(args: argparse.Namespace) -> int:
    dag = load_workload(args.workload)
    opts = plan_options(args)
    t0 = time.perf_counter()
    plan = plan_session(dag, opts)
    runtime_ms = (time.perf_counter() - t0) * 1000
    log.debug("planned %s in %.2f ms", args.workload, runtime_ms)
    report = plan_to_dict(plan, opts.scheduler.policy.value, runtime_ms if args.timing else None)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_atomic(args.out / f"{Path(args.workload).stem}.plan.json", dump_json(report))
    _emit(args, report, _plan_text(Path(args.workload).stem, report, runtime_ms))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    dag = load_workload(args.workload)
    plan = load_plan(args.plan, dag)
    policy = DispatchPolicy.parse(args.policy or plan.extras.get("policy", "tc"))
    sim = SimConfig(duration=args.duration, arrival=args.arrival, seed=args.seed, accounting=args.accounting)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
    modules = {}
    ok = True
    for m in dag.topo_order():
        schedule = plan.schedules[m]
        trace, summary = simulate(schedule, dag.rates[m], policy, sim)
        entry = {
            "max_latency": summary.max_latency,
            "p50": summary.p50,
            "p99": summary.p99,
            "requests": summary.requests,
            "wcl": schedule.wcl,
        }
        if sim.arrival == "uniform":
            bound = check_bound(trace, schedule, policy)
            ok = ok and bound.ok
            entry["bound"] = bound.to_json()
        modules[m] = entry
        if args.out is not None:
            buf = io.StringIO()
            trace.write_jsonl(buf)
            write_atomic(args.out / f"{m}.trace.jsonl", buf.getvalue())
    report = {"policy": policy.value, "accounting": sim.accounting, "bound_ok": ok, "modules": modules}
    lines = [f"simulate ({policy.value}, {sim.accounting} accounting): bound {'ok' if ok else 'VIOLATED'}"]
    for m, e in modules.items():
        flag = "" if "bound" not in e else ("  ok" if e["bound"]["ok"] else "  violation")
        lines.append(f"  {m}: max {e['max_latency']:.6g}s  p50 {e['p50']:.6g}s  p99 {e['p99']:.6g}s  wcl {e['wcl']:.6g}s{flag}")
    _emit(args, report, "\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_BOUND


def _workload_paths(paths: Sequence[Path]) -> list[Path]:
    out = []
    for p in paths:
        out.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    return out


def _compare(name: str, dag: AppDag, opts: PlanOptions, limits: OracleLimits) -> dict:
    t0 = time.perf_counter()
    plan = plan_session(dag, opts)
    t1 = time.perf_counter()
    best = optimal_plan(dag, opts.scheduler.policy, limits)
    t2 = time.perf_counter()
    gap = (plan.total_cost - best.total_cost) / best.total_cost
    return {
        "instance": name,
        "planner_cost": plan.total_cost,
        "oracle_cost": best.total_cost,
        "gap_pct": 100 * gap,
        "planner_ms": (t1 - t0) * 1000,
        "oracle_ms": (t2 - t1) * 1000,
    }


def cmd_oracle(args: argparse.Namespace) -> int:
    opts = plan_options(args)
    limits = OracleLimits(max_nodes=args.max_nodes)
    if args.workloads:
        items = [(p.stem, load_workload(p)) for p in _workload_paths(args.workloads)]
    else:
        items = synthesize(args.seed, args.count, ORACLE_SIZED)
    if len(items) == 1 and args.workloads and not Path(args.workloads[0]).is_dir():
        name, dag = items[0]
        row = _compare(name, dag, opts, limits)
        _emit(args, row, f"{name}: planner {row['planner_cost']:.6g} ({row['planner_ms']:.2f} ms), oracle "
                         f"{row['oracle_cost']:.6g} ({row['oracle_ms']:.2f} ms), gap {row['gap_pct']:.3f}%\n")
        return EXIT_OK
    rows, skipped = [], {"infeasible": 0, "limits": 0}
    for name, dag in items:
        try:
            rows.append(_compare(name, dag, opts, limits))
        except Infeasible:
            skipped["infeasible"] += 1
        except OracleLimitExceeded:
            skipped["limits"] += 1
    matched = sum(1 for r in rows if r["gap_pct"] <= 1e-7)
    summary = {
        "instances": rows,
        "compared": len(rows),
        "matched": matched,
        "match_rate": matched / len(rows) if rows else 0.0,
        "max_gap_pct": max((r["gap_pct"] for r in rows), default=0.0),
        "lower_bound_violations": sum(1 for r in rows if r["gap_pct"] < -1e-7),
        "skipped": skipped,
    }
    lines = [f"{r['instance']}: planner {r['planner_cost']:.6g}, oracle {r['oracle_cost']:.6g}, gap {r['gap_pct']:.3f}%"
             for r in rows]
    lines.append(f"match rate {matched}/{len(rows)} ({100 * summary['match_rate']:.1f}%), max gap "
                 f"{summary['max_gap_pct']:.3f}%, skipped {skipped['infeasible']} infeasible, {skipped['limits']} over limits")
    _emit(args, summary, "\n".join(lines) + "\n")
    return EXIT_OK


SHAPES = {"default": SynthOptions(), "oracle": ORACLE_SIZED, "single": SINGLE_MODULE}


def cmd_synthesize(args: argparse.Namespace) -> int:
    opts = SHAPES[args.shape]
    if args.max_modules is not None:
        opts = replace(opts, max_modules=args.max_modules, min_modules=min(opts.min_modules, args.max_modules))
    out = args.out or Path("corpus")
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for name, dag in synthesize(args.seed, args.count, opts):
        write_atomic(out / f"{name}.json", dump_json(workload_to_dict(dag)))
        names.append(name)
    _emit(args, {"dir": str(out), "workloads": names}, f"wrote {len(names)} workloads to {out}\n")
    return EXIT_OK


def _ablate_one(job: tuple[str, dict, PlanOptions]) -> list[Optional[float]]:
    name, doc, base = job
    dag = workload_from_dict(doc)
    costs = []
    for sched, split, extra in VARIANTS.values():
        opts = replace(base, scheduler=replace(base.scheduler, **sched), splitter=replace(base.splitter, **split), **extra)
        try:
            costs.append(plan_session(dag, opts).total_cost)
        except Infeasible:
            costs.append(None)
    return costs


def ablation_table(items: Sequence[tuple[str, dict]], base: PlanOptions, jobs: int = 1) -> str:
    """CSV of per-instance costs normalized to the full planner; the last row averages the instances feasible in every variant."""
    work = [(name, doc, base) for name, doc in items]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ablate_one, work))
    else:
        results = [_ablate_one(w) for w in work]
    names = list(VARIANTS)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance"] + names)
    sums = [0.0] * len(names)
    complete = 0
    for (name, _), costs in zip(items, results):
        full = costs[0]
        if full is None:
            w.writerow([name] + [""] * len(names))
            continue
        norm = [None if c is None else c / full for c in costs]
        w.writerow([name] + ["" if x is None else f"{x:.6f}" for x in norm])
        if all(x is not None for x in norm):
            complete += 1
            sums = [s + x for s, x in zip(sums, norm)]
    w.writerow([f"mean(n={complete})"] + [f"{s / complete:.6f}" if complete else "" for s in sums])
    return buf.getvalue()


def cmd_ablate(args: argparse.Namespace) -> int:
    paths = _workload_paths([args.corpus])
    if not paths:
        raise PlanningError(f"no workloads in {args.corpus}")
    items = [(p.stem, loads_json(p.read_text())) for p in paths]
    for p, (_, doc) in zip(paths, items):
        load_workload(p)  # validate up front so a bad file fails fast
    table = ablation_table(items, plan_options(args), args.jobs)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_atomic(args.out / "ablation.csv", table)
    if args.json:
        rows = list(csv.reader(io.StringIO(table)))
        mean = {k: float(v) for k, v in zip(rows[0][1:], rows[-1][1:]) if v}
        sys.stdout.write(dump_json({"instances": len(rows) - 2, "averaged": rows[-1][0], "mean": mean}))
    else:
        sys.stdout.write(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    shared = _shared()
    parser = argparse.ArgumentParser(prog="dnnplan", description="Cost-minimizing planner for DNN serving pipelines.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[shared], help="plan one workload")
    p.add_argument("workload", type=Path)
    p.add_argument("--timing", action="store_true", help="include runtime_ms in the JSON report")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", parents=[shared], help="replay a plan and check latency bounds")
    p.add_argument("workload", type=Path)
    p.add_argument("plan", type=Path)
    p.add_argument("--accounting", choices=["cycle", "request"], default="cycle")
    p.add_argument("--arrival", choices=["uniform", "poisson"], default="uniform")
    p.add_argument("--duration", type=float, default=None, help="simulated seconds (default 40 cycles)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", parents=[shared], help="compare the planner with exhaustive search")
    p.add_argument("workloads", type=Path, nargs="*", help="workload files or directories")
    p.add_argument("--count", type=int, default=50, help="synthesized instances when no workload is given")
    p.add_argument("--max-nodes", type=int, default=OracleLimits().max_nodes)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("synthesize", parents=[shared], help="write a seeded workload corpus")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--shape", choices=sorted(SHAPES), default="default")
    p.add_argument("--max-modules", type=int, default=None)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("ablate", parents=[shared], help="normalized cost of every ablation variant")
    p.add_argument("corpus", type=Path)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OracleLimitExceeded as exc:
        print(f"oracle limits exceeded: {exc}", file=sys.stderr)
        return EXIT_LIMITS
    except (PlanningError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
