"""Per-module configuration sets and residual-workload optimizers.

``generate_config`` is the greedy multi-tuple allocator: walk configs in
ratio order, put as many full machines on the current config as its latency
allows, and hand whatever is left to the next feasible config. The dummy
generator and the latency reassigner both try to push that residual onto a
higher-ratio config, one by padding the rate and the other by spending spare
end-to-end latency.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Sequence

from .dispatch import DispatchPolicy, make_schedule, planning_wcl
from .model import (
    EPS,
    AppDag,
    ConfigProfile,
    Infeasible,
    ModuleProfile,
    ModuleSchedule,
    PlanningError,
    SessionPlan,
    Tier,
    e2e_latency,
    path_through,
)

MAX_REASSIGN_ROUNDS = 16
MAX_BACKOFFS = 64


@dataclass(frozen=True)
class SchedulerOptions:
    policy: DispatchPolicy = DispatchPolicy.TC
    max_configs: Optional[int] = None
    enable_dummy: bool = True
    enable_reassign: bool = True
    enable_recombine: bool = True
    dummy_search: str = "greedy"  # greedy | tiers

    def __post_init__(self) -> None:
        if self.max_configs is not None and self.max_configs < 1:
            raise PlanningError("max_configs must be >= 1")
        if self.dummy_search not in ("greedy", "tiers"):
            raise PlanningError(f"unknown dummy search {self.dummy_search!r}")


class _Builder:
    """Mutable tier accumulator; consecutive allocations of one config merge."""

    def __init__(self, seed: Sequence[Tier] = ()):
        self.rows: list[list] = [[t.config, t.full_machines, t.partial_fraction * t.config.throughput] for t in seed]

    def __len__(self) -> int:
        return len(self.rows)

    def last_config(self) -> Optional[ConfigProfile]:
        return self.rows[-1][0] if self.rows else None

    def add(self, config: ConfigProfile, full: int, partial_rate: float = 0.0) -> None:
        if self.rows and self.rows[-1][0] is config:
            self.rows[-1][1] += full
            self.rows[-1][2] += partial_rate
        else:
            self.rows.append([config, full, partial_rate])

    def cost(self) -> float:
        return sum(c.price * (full + prate / c.throughput) for c, full, prate in self.rows)

    def tiers(self) -> tuple[Tier, ...]:
        out = []
        for c, full, prate in self.rows:
            t = c.throughput
            frac = prate / t
            if frac < EPS:
                frac = 0.0
            out.append(Tier(c, full, frac, full * t + frac * t))
        return tuple(out)


def _absorbs(config: ConfigProfile, rw: float, budget: float, policy: DispatchPolicy) -> bool:
    t = config.throughput
    full = math.floor(rw / t + EPS)
    rem = rw - full * t
    if full >= 1 and planning_wcl(config, rw, policy) > budget + EPS:
        return False
    if rem > EPS and planning_wcl(config, rem, policy) > budget + EPS:
        return False
    return True


class _Stuck(Infeasible):
    """Allocation ran out of configs; carries the rows placed so far."""

    def __init__(self, msg: str, rows: list[list]):
        super().__init__(msg)
        self.rows = rows


def _fill(
    rate: float,
    budget: float,
    configs: Sequence[ConfigProfile],
    policy: DispatchPolicy,
    max_configs: Optional[int],
    seed: Sequence[Tier] = (),
    start: int = 0,
    rows: Optional[list[list]] = None,
) -> _Builder:
    b = _Builder(seed)
    if rows is not None:
        b.rows = [list(r) for r in rows]
    rw = rate
    k = start
    tol = EPS * max(1.0, rate)
    while rw > tol:
        if k >= len(configs):
            raise _Stuck(f"no config meets budget {budget:.6g} at residual {rw:.6g} req/s", b.rows)
        c = configs[k]
        fresh = b.last_config() is not c
        if fresh and max_configs is not None:
            if len(b) >= max_configs:
                raise _Stuck("configuration limit reached", b.rows)
            if len(b) == max_configs - 1:
                # last slot: one config must take all of rw
                for cand in configs[k:]:
                    if _absorbs(cand, rw, budget, policy):
                        t = cand.throughput
                        full = math.floor(rw / t + EPS)
                        rem = rw - full * t
                        b.add(cand, full, rem if rem > tol else 0.0)
                        return b
                raise _Stuck(f"no single config absorbs residual {rw:.6g} req/s", b.rows)
        if planning_wcl(c, rw, policy) <= budget + EPS:
            t = c.throughput
            n = rw / t
            if n >= 1 - EPS:
                full = math.floor(n + EPS)
                b.add(c, full)
                rw -= full * t
            else:
                b.add(c, 0, rw)
                rw = 0.0
        else:
            k += 1
    return b


def _allocate(
    rate: float,
    budget: float,
    configs: Sequence[ConfigProfile],
    policy: DispatchPolicy,
    max_configs: Optional[int],
    seed: Sequence[Tier] = (),
    start: int = 0,
) -> tuple[Tier, ...]:
    return _fill(rate, budget, configs, policy, max_configs, seed, start).tiers()


def _fill_backoff(
    rate: float, budget: float, configs: Sequence[ConfigProfile], policy: DispatchPolicy, max_configs: Optional[int]
) -> _Builder:
    # When the leftover is too thin for any config, give back the most recent
    # full machine and let the following configs carry its load as well.
    rows: Optional[list[list]] = None
    rw, k = rate, 0
    for _ in range(MAX_BACKOFFS):
        try:
            return _fill(rw, budget, configs, policy, max_configs, start=k, rows=rows)
        except _Stuck as stuck:
            placed = stuck.rows
        j = next((i for i in range(len(placed) - 1, -1, -1) if placed[i][1] >= 1), None)
        if j is None:
            break
        rows = [list(r) for r in placed[: j + 1]]
        c = rows[j][0]
        rows[j][1] -= 1
        if rows[j][1] == 0 and rows[j][2] <= 0:
            rows.pop()
        rw = rate - sum(full * cfg.throughput + prate for cfg, full, prate in rows)
        k = next(i for i, cfg in enumerate(configs) if cfg is c) + 1
    raise Infeasible(f"no allocation of {rate:.6g} req/s meets budget {budget:.6g}")


def generate_config(
    rate: float, budget: float, profile: ModuleProfile, options: SchedulerOptions, backoff: bool = False
) -> ModuleSchedule:
    """Greedy multi-tuple allocation; raises :class:`Infeasible` when configs run out.

    With ``backoff`` a dead end releases the latest full machine to the
    lower-ratio configs instead of failing outright.
    """
    if rate <= 0 or budget <= 0:
        raise PlanningError("rate and budget must be positive")
    if backoff:
        tiers = _fill_backoff(rate, budget, profile.entries, options.policy, options.max_configs).tiers()
    else:
        tiers = _allocate(rate, budget, profile.entries, options.policy, options.max_configs)
    return make_schedule(profile.module_id, tiers, 0.0, options.policy)


def leftover_workloads(schedule: ModuleSchedule) -> list[tuple[Tier, float]]:
    """Pair each tier with the rate carried by strictly later tiers."""
    out = []
    later = 0.0
    for t in reversed(schedule.tiers):
        out.append((t, later))
        later += t.assigned_rate
    return out[::-1]


def schedule_with_dummy(
    rate: float, dummy: float, budget: float, profile: ModuleProfile, options: SchedulerOptions
) -> ModuleSchedule:
    """Run the allocator on ``rate + dummy`` and record the padding."""
    s = generate_config(rate + dummy, budget, profile, options)
    return replace(s, dummy_rate=dummy)


def _better(a: ModuleSchedule, b: Optional[ModuleSchedule]) -> bool:
    if b is None:
        return True
    if a.cost < b.cost - EPS:
        return True
    return abs(a.cost - b.cost) <= EPS and a.dummy_rate < b.dummy_rate - EPS


def greedy_residuals(rate: float, profile: ModuleProfile) -> list[float]:
    """Every leftover the allocator can reach by skipping or flooring each config in turn."""
    states = {round(rate, 9): rate}
    for c in profile.entries:
        for g in list(states.values()):
            r = g - math.floor(g / c.throughput + EPS) * c.throughput
            if r > EPS:
                states.setdefault(round(r, 9), r)
    return [states[k] for k in sorted(states)]


def dummy_candidates(
    schedule: Optional[ModuleSchedule], rate: float, profile: ModuleProfile, options: SchedulerOptions
) -> list[float]:
    """Padding amounts to try: ``t_i - u_i`` per tier, or (greedy) the round-up of any config at any reachable leftover."""
    out = set()
    if options.dummy_search == "tiers":
        if schedule is not None:
            for tier, u in leftover_workloads(schedule):
                if u > EPS:
                    out.add(round(schedule.dummy_rate + tier.config.throughput - u, 9))
        return sorted(out)
    return list(_greedy_dummies(rate, profile))


@lru_cache(maxsize=1024)
def _greedy_dummies(rate: float, profile: ModuleProfile) -> tuple[float, ...]:
    out = set()
    for g in greedy_residuals(rate, profile):
        for c in profile.entries:
            t = c.throughput
            r = g - math.floor(g / t + EPS) * t
            if r > EPS and t - r > EPS:
                out.add(round(t - r, 9))
    return tuple(sorted(out))


def _padded(
    rate: float, dum: float, budget: float, profile: ModuleProfile, options: SchedulerOptions, best: Optional[ModuleSchedule]
) -> Optional[ModuleSchedule]:
    # cheap cost check on the raw tiers before building the full schedule
    total = rate + dum
    r_feas = max((c.ratio for c in profile.entries if planning_wcl(c, total, options.policy) <= budget + EPS), default=0.0)
    if r_feas <= 0 or (best is not None and total / r_feas > best.cost + EPS):
        return None  # even the best usable config cannot undercut ``best``
    try:
        rows = _fill(rate + dum, budget, profile.entries, options.policy, options.max_configs)
    except Infeasible:
        return None
    if best is not None and rows.cost() > best.cost + EPS:
        return None
    cand = make_schedule(profile.module_id, rows.tiers(), dum, options.policy)
    return cand if _better(cand, best) else None


def apply_dummy(
    schedule: ModuleSchedule, rate: float, budget: float, profile: ModuleProfile, options: SchedulerOptions
) -> ModuleSchedule:
    """Re-plan at ``rate + dummy`` for each candidate padding and keep the cheapest result."""
    best = schedule
    r_max = profile.entries[0].ratio
    for dum in dummy_candidates(schedule, rate, profile, options):
        if (rate + dum) / r_max >= best.cost - EPS:
            break  # no padded plan can undercut the current best
        best = _padded(rate, dum, budget, profile, options, best) or best
    return best


def _rescue_with_dummy(
    rate: float, budget: float, profile: ModuleProfile, options: SchedulerOptions, fallback: Optional[ModuleSchedule]
) -> ModuleSchedule:
    # the residual is too thin for any config: pad it, round the rate up to
    # whole machines, or keep the backed-off allocation
    best = apply_dummy(fallback, rate, budget, profile, options) if fallback is not None else None
    r_max = profile.entries[0].ratio
    for dum in dummy_candidates(None, rate, profile, options):
        if best is not None and (rate + dum) / r_max >= best.cost - EPS:
            break
        best = _padded(rate, dum, budget, profile, options, best) or best
    for c in profile.entries:
        if planning_wcl(c, rate, options.policy) > budget + EPS:
            continue
        t = c.throughput
        n = math.ceil(rate / t - EPS)
        dum = n * t - rate
        cands = []
        try:
            cands.append(schedule_with_dummy(rate, dum, budget, profile, options))
        except Infeasible:
            pass
        single = make_schedule(profile.module_id, (Tier.of(c, n),), dum, options.policy)
        if single.wcl <= budget + EPS:
            cands.append(single)
        for s in cands:
            if _better(s, best):
                best = s
    if best is None:
        raise Infeasible(f"{profile.module_id}: no config meets budget {budget:.6g}")
    return best


def schedule_module(rate: float, budget: float, profile: ModuleProfile, options: SchedulerOptions) -> ModuleSchedule:
    """Allocator followed by the dummy generator when enabled."""
    try:
        base = generate_config(rate, budget, profile, options)
    except Infeasible:
        try:
            fallback = generate_config(rate, budget, profile, options, backoff=True)
        except Infeasible:
            if not options.enable_dummy:
                raise
            fallback = None
        if not options.enable_dummy:
            return fallback
        return _rescue_with_dummy(rate, budget, profile, options, fallback)
    if options.enable_dummy:
        return apply_dummy(base, rate, budget, profile, options)
    return base


def reassign_residual(
    schedule: ModuleSchedule, budget: float, profile: ModuleProfile, options: SchedulerOptions
) -> Optional[ModuleSchedule]:
    """Keep the first tier's full machines and re-run the allocator on the rest at ``budget``."""
    first = schedule.tiers[0]
    if first.full_machines == 0:
        return None
    held = Tier.of(first.config, first.full_machines)
    residual = schedule.total_rate - held.assigned_rate
    if residual <= EPS:
        return None
    try:
        tiers = _allocate(
            residual, budget, profile.entries, options.policy, options.max_configs,
            seed=(held,), start=profile.index(first.config),
        )
    except Infeasible:
        return None
    return make_schedule(profile.module_id, tiers, schedule.dummy_rate, options.policy)


def reassign_latency(plan: SessionPlan, dag: AppDag, options: SchedulerOptions) -> SessionPlan:
    """Spend the end-to-end slack on one module's residual at a time, greedily by cost saved."""
    schedules = dict(plan.schedules)
    budgets = dict(plan.budgets)
    rounds = 0
    for _ in range(MAX_REASSIGN_ROUNDS):
        wcl = {m: s.wcl for m, s in schedules.items()}
        e2e = e2e_latency(dag, wcl)
        if dag.slo - e2e <= EPS:
            break
        through = path_through(dag, wcl)
        best = None
        for m in sorted(schedules):
            s = schedules[m]
            slack = dag.slo - through[m]
            if slack <= EPS:
                continue
            new_budget = s.wcl + slack
            prof = dag.modules[m]
            cands = [reassign_residual(s, new_budget, prof, options)]
            if options.enable_dummy:
                try:
                    cands.append(schedule_module(dag.rates[m], new_budget, prof, options))
                except Infeasible:
                    pass
            for c in cands:
                if c is None or c.wcl > new_budget + EPS:
                    continue
                gain = s.cost - c.cost
                if gain > EPS and (best is None or gain > best[0] + EPS):
                    best = (gain, m, c, new_budget)
        if best is None:
            break
        _, m, c, nb = best
        schedules[m] = c
        budgets[m] = nb
        rounds += 1
    if rounds == 0:
        return plan
    wcl = {m: s.wcl for m, s in schedules.items()}
    extras = dict(plan.extras)
    extras["reassign_rounds"] = extras.get("reassign_rounds", 0) + rounds
    return SessionPlan(budgets, schedules, sum(s.cost for s in schedules.values()), e2e_latency(dag, wcl), extras)


def combine_frontiers(
    dag: AppDag, fronts: dict[str, list[ModuleSchedule]], bound: float = math.inf
) -> Optional[dict[str, ModuleSchedule]]:
    """Cheapest pick of one schedule per module whose longest path fits the SLO.

    Each front must be sorted by cost ascending. Branch and bound in topological
    order, pruned by the cheapest remaining choices; only picks cheaper than
    ``bound`` are returned.
    """
    order = dag.topo_order()
    parents = {m: dag.parents(m) for m in order}
    neg_wcl = {m: [-s.wcl for s in fronts[m]] for m in order}  # ascending, since wcl falls as cost rises
    ancestors: dict[str, set[str]] = {}
    for m in order:
        ancestors[m] = set(parents[m]).union(*(ancestors[p] for p in parents[m]))
    tail: dict[str, float] = {}  # shortest possible latency strictly below each module
    for m in reversed(order):
        tail[m] = max((fronts[c][-1].wcl + tail[c] for c in dag.children(m)), default=0.0)
    min_rest = [0.0] * (len(order) + 1)
    for i in range(len(order) - 1, -1, -1):
        min_rest[i] = min_rest[i + 1] + fronts[order[i]][0].cost
    best: list = [bound, None]
    into: dict[str, float] = {}
    chosen: dict[str, ModuleSchedule] = {}

    def rest_cost(i: int) -> float:
        # cheapest choice of every later module given the latencies fixed so far
        total = 0.0
        for m in order[i:]:
            base = max((into[a] for a in ancestors[m] if a in into), default=0.0)
            j = bisect_left(neg_wcl[m], base + tail[m] - dag.slo - EPS)
            if j == len(fronts[m]):
                return math.inf
            total += fronts[m][j].cost
        return total

    def rec(i: int, cost: float) -> None:
        if i == len(order):
            best[0], best[1] = cost, dict(chosen)
            return
        m = order[i]
        base = max((into[p] for p in parents[m]), default=0.0)
        front = fronts[m]
        for j in range(bisect_left(neg_wcl[m], base + tail[m] - dag.slo - EPS), len(front)):
            s = front[j]
            if cost + s.cost + min_rest[i + 1] >= best[0] - EPS:
                break  # fronts are cost-sorted
            into[m] = base + s.wcl
            if cost + s.cost + rest_cost(i + 1) >= best[0] - EPS:
                continue
            chosen[m] = s
            rec(i + 1, cost + s.cost)
        into.pop(m, None)
        chosen.pop(m, None)

    rec(0, 0.0)
    return best[1]


def module_frontier(
    rate: float, profile: ModuleProfile, options: SchedulerOptions, lo: float, hi: float, cost_cap: float = math.inf
) -> list[ModuleSchedule]:
    """Allocator outputs at every budget in ``[lo, hi]`` where its choices can change.

    For a fixed padded total the allocator only compares ``d + b/w`` against
    the budget over its own leftovers ``w``, so those values are the only
    budgets worth trying. Allocations that cannot cost less than ``cost_cap``
    are skipped.
    """
    totals = [0.0]
    if options.enable_dummy:
        totals += dummy_candidates(None, rate, profile, options)
    out, seen = [], set()
    r_max = profile.entries[0].ratio
    for dum in totals:
        total = rate + dum
        if total / r_max >= cost_cap - EPS:
            break
        budgets = set()
        # padded totals: only the first-tier breakpoints, to bound the work
        for w in greedy_residuals(total, profile) if dum == 0 else (total,):
            for c in profile.entries:
                v = planning_wcl(c, w, options.policy)
                if lo - EPS <= v <= hi + EPS:
                    budgets.add(round(v, 12))
        # best usable ratio grows as the budget admits more configs at the full total
        gates = sorted((planning_wcl(c, total, options.policy), c.ratio) for c in profile.entries)
        gi, r_feas = 0, 0.0
        for budget in sorted(budgets):
            while gi < len(gates) and gates[gi][0] <= budget + EPS:
                r_feas = max(r_feas, gates[gi][1])
                gi += 1
            if r_feas <= 0 or total / r_feas >= cost_cap - EPS:
                continue
            try:
                rows = _fill(total, budget, profile.entries, options.policy, options.max_configs)
            except Infeasible:
                continue
            key = tuple((id(c), full, round(prate, 9)) for c, full, prate in rows.rows)
            if key in seen or rows.cost() >= cost_cap - EPS:
                continue
            seen.add(key)
            out.append(make_schedule(profile.module_id, rows.tiers(), dum, options.policy))
    return out


def recombine_budgets(plan: SessionPlan, dag: AppDag, options: SchedulerOptions) -> SessionPlan:
    """Re-plan every module at a set of candidate budgets and pick the cheapest fitting combination.

    Gives up latency on one module to buy a cheaper config on another, a trade
    that single-module slack reassignment can never make.
    """
    if len(dag.modules) < 2:
        return plan
    lb = {}
    for m, prof in dag.modules.items():
        pad = max(dummy_candidates(None, dag.rates[m], prof, options), default=0.0) if options.enable_dummy else 0.0
        lb[m] = min(planning_wcl(c, dag.rates[m] + pad, options.policy) for c in prof.entries)
    through = path_through(dag, lb)
    floor = {m: dag.rates[m] / dag.modules[m].entries[0].ratio for m in dag.modules}
    floor_total = sum(floor.values())
    fronts: dict[str, list[ModuleSchedule]] = {}
    for m in dag.topo_order():
        rate, prof = dag.rates[m], dag.modules[m]
        # no budget outside [own floor, SLO minus the floors of the rest of its path] can matter
        cap = dag.slo - (through[m] - lb[m])
        pts = [plan.schedules[m]] + module_frontier(rate, prof, options, lb[m], cap, plan.total_cost - (floor_total - floor[m]))
        pts.sort(key=lambda s: (round(s.cost, 9), s.wcl))
        front, best_wcl = [], math.inf
        for s in pts:
            if s.wcl < best_wcl - EPS:
                front.append(s)
                best_wcl = s.wcl
        fronts[m] = front
    picked = combine_frontiers(dag, fronts, plan.total_cost)
    if picked is None:
        return plan
    cost = sum(s.cost for s in picked.values())
    if cost >= plan.total_cost - EPS:
        return plan
    wcl = {m: s.wcl for m, s in picked.items()}
    extras = dict(plan.extras)
    extras["recombined"] = True
    return SessionPlan(wcl, picked, cost, e2e_latency(dag, wcl), extras)
