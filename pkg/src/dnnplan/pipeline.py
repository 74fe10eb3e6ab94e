"""End-to-end planning: split the SLO, schedule each module, then spend leftover slack."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .model import EPS, AppDag, Infeasible, PlanningError, SessionPlan, e2e_latency, path_through, validate_dag
from .scheduler import SchedulerOptions, reassign_latency, recombine_budgets, schedule_module
from .splitter import SplitterOptions, baseline_split, lc_split_state, state_latencies


@dataclass(frozen=True)
class PlanOptions:
    scheduler: SchedulerOptions = field(default_factory=SchedulerOptions)
    splitter: SplitterOptions = field(default_factory=SplitterOptions)
    cost_direct_auto: bool = False


def _budgets(dag: AppDag, opts: PlanOptions) -> tuple[dict[str, float], list]:
    sp, policy = opts.splitter, opts.scheduler.policy
    if sp.method in ("lc", "throughput"):
        state = lc_split_state(dag, sp, policy)
        return state_latencies(dag, state, policy), state.history
    cache: dict = {}

    def cost_at(m: str, budget: float) -> Optional[float]:
        key = (m, round(budget, 9))
        if key not in cache:
            try:
                cache[key] = schedule_module(dag.rates[m], budget, dag.modules[m], opts.scheduler).cost
            except Infeasible:
                cache[key] = None
        return cache[key]

    return baseline_split(dag, sp, policy, cost_at), []


def _plan_once(dag: AppDag, opts: PlanOptions) -> SessionPlan:
    budgets, history = _budgets(dag, opts)
    schedules = {}
    for m in dag.topo_order():
        try:
            schedules[m] = schedule_module(dag.rates[m], budgets[m], dag.modules[m], opts.scheduler)
        except Infeasible:
            slack = dag.slo - path_through(dag, budgets)[m]
            if slack <= EPS:
                raise
            budgets[m] += slack
            schedules[m] = schedule_module(dag.rates[m], budgets[m], dag.modules[m], opts.scheduler)
    wcl = {m: s.wcl for m, s in schedules.items()}
    plan = SessionPlan(
        budgets, schedules, sum(s.cost for s in schedules.values()), e2e_latency(dag, wcl),
        {"split_history": [op.to_json() for op in history], "split_iterations": len(history)},
    )
    if opts.scheduler.enable_reassign:
        plan = reassign_latency(plan, dag, opts.scheduler)
    if opts.scheduler.enable_recombine:
        traded = recombine_budgets(plan, dag, opts.scheduler)
        if traded is not plan and opts.scheduler.enable_reassign:
            traded = reassign_latency(traded, dag, opts.scheduler)
        plan = traded
    if plan.e2e_latency > dag.slo + EPS:
        raise Infeasible(f"plan latency {plan.e2e_latency:.6g} exceeds SLO {dag.slo:.6g}")
    return plan


def plan_session(dag: AppDag, opts: PlanOptions = PlanOptions()) -> SessionPlan:
    errors = validate_dag(dag)
    if errors:
        raise PlanningError("; ".join(errors))
    if not opts.cost_direct_auto:
        return _plan_once(dag, opts)
    best = None
    for r in (1, 2, 3, 4):
        o = replace(opts, splitter=replace(opts.splitter, cost_direct_r=r), cost_direct_auto=False)
        try:
            p = _plan_once(dag, o)
        except Infeasible:
            continue
        if best is None or p.total_cost < best.total_cost - EPS:
            best = p
    if best is None:
        raise Infeasible("no cost-direct setting yields a feasible plan")
    return best
