"""Exhaustive minimum-cost search on small instances.

A module's search space is every canonical tier list: each config, in ratio
order, is skipped or given any number of full machines, and any config may
close the list by absorbing the remainder with a partial machine. Dummy
padding is searched over the totals ``rate + (t - u)`` for every throughput
``t`` and every leftover ``u`` the greedy allocator can leave behind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dispatch import DispatchPolicy, make_schedule, planning_wcl
from .model import EPS, AppDag, Infeasible, ModuleProfile, ModuleSchedule, SessionPlan, Tier, e2e_latency


class OracleLimitExceeded(Exception):
    pass


@dataclass(frozen=True)
class OracleLimits:
    max_tiers: int = 4
    max_modules: int = 4
    max_configs_per_module: int = 4
    max_nodes: int = 400_000


@dataclass(frozen=True)
class ParetoPoint:
    cost: float
    wcl: float
    schedule: ModuleSchedule


@dataclass
class ModuleFrontier:
    points: list[ParetoPoint]
    partial: bool = False
    nodes: int = 0


def _encode(tiers) -> tuple:
    return tuple((t.config.hardware.name, t.config.batch, t.full_machines, round(t.partial_fraction, 9)) for t in tiers)


def _pareto(pts: list[tuple]) -> list[tuple]:
    """Keep (cost, wcl, ...) entries not dominated on both coordinates."""
    pts = sorted(pts, key=lambda p: (round(p[0], 9), round(p[1], 12), _encode(p[2])))
    out = []
    best_wcl = math.inf
    for p in pts:
        if p[1] < best_wcl - EPS:
            out.append(p)
            best_wcl = p[1]
    return out


class _Search:
    def __init__(self, profile: ModuleProfile, cap: float, policy: DispatchPolicy, limits: OracleLimits):
        self.configs = profile.entries
        self.cap = cap
        self.policy = policy
        self.limits = limits
        self.nodes = 0
        self.partial = False
        self.memo: dict = {}

    def _tick(self) -> bool:
        self.nodes += 1
        if self.nodes > self.limits.max_nodes:
            self.partial = True
            return False
        return True

    def suffix(self, k: int, rw: float, tiers_left: int) -> list[tuple]:
        key = (k, round(rw, 9), tiers_left)
        if key in self.memo:
            return self.memo[key]
        if not self._tick():
            return []
        out: list[tuple] = []
        if k < len(self.configs) and rw > EPS:
            out.extend(self.suffix(k + 1, rw, tiers_left))
            if tiers_left > 0:
                out.extend(self._use(k, rw, tiers_left))
        res = _pareto(out)
        self.memo[key] = res
        return res

    def _use(self, k: int, rw: float, tiers_left: int) -> list[tuple]:
        c = self.configs[k]
        t, p = c.throughput, c.price
        out = []
        top = math.floor(rw / t + EPS)
        full_wcl = planning_wcl(c, rw, self.policy) if top >= 1 else None
        if full_wcl is not None and full_wcl <= self.cap + EPS:
            for n in range(1, top + 1):
                rest = rw - n * t
                if rest <= EPS:
                    out.append((n * p, full_wcl, (Tier.of(c, n),)))
                    continue
                for cost, wcl, tiers in self.suffix(k + 1, rest, tiers_left - 1):
                    out.append((cost + n * p, max(full_wcl, wcl), (Tier.of(c, n),) + tiers))
        rem = rw - top * t
        if rem > EPS and (top == 0 or (full_wcl is not None and full_wcl <= self.cap + EPS)):
            part_wcl = planning_wcl(c, rem, self.policy)
            wcl = max(part_wcl, full_wcl or 0.0)
            if wcl <= self.cap + EPS:
                out.append(((top + rem / t) * p, wcl, (Tier(c, top, rem / t, rw),)))
        return out

    def dummy_candidates(self, rate: float) -> list[float]:
        """Round-up distances ``t_j - (g mod t_j)`` over every floor-or-skip state ``g``.

        Walking the configs in order and either skipping one or taking
        ``floor(g / t)`` full machines of it reaches at most 2^K residuals;
        every dummy amount the greedy planner can add is one of these.
        """
        states = {round(rate, 9): rate}
        for c in self.configs:
            for g in list(states.values()):
                r = g - math.floor(g / c.throughput + EPS) * c.throughput
                if r > EPS:
                    states.setdefault(round(r, 9), r)
        seen = set()
        for g in states.values():
            for c in self.configs:
                t = c.throughput
                r = g - math.floor(g / t + EPS) * t
                if r > EPS and t - r > EPS:
                    seen.add(round(t - r, 9))
        return sorted(seen)


def enumerate_module_schedules(
    rate: float,
    profile: ModuleProfile,
    slo_cap: float,
    policy: DispatchPolicy,
    limits: OracleLimits = OracleLimits(),
) -> ModuleFrontier:
    """Pareto set of (cost, wcl) over all tier lists, with and without dummy padding."""
    search = _Search(profile, slo_cap, policy, limits)
    pts = []
    for dummy in [0.0] + search.dummy_candidates(rate):
        for cost, wcl, tiers in search.suffix(0, rate + dummy, limits.max_tiers):
            pts.append((cost, wcl, tiers, dummy))
    pts = _pareto(pts)
    points = [
        ParetoPoint(cost, wcl, make_schedule(profile.module_id, tiers, dummy, policy))
        for cost, wcl, tiers, dummy in pts
    ]
    return ModuleFrontier(points, search.partial, search.nodes)


def check_limits(dag: AppDag, limits: OracleLimits) -> None:
    if len(dag.modules) > limits.max_modules:
        raise OracleLimitExceeded(f"{len(dag.modules)} modules > {limits.max_modules}")
    for m, prof in dag.modules.items():
        if len(prof) > limits.max_configs_per_module:
            raise OracleLimitExceeded(f"{m}: {len(prof)} configs > {limits.max_configs_per_module}")


def optimal_plan(dag: AppDag, policy: DispatchPolicy, limits: OracleLimits = OracleLimits()) -> SessionPlan:
    """Cheapest combination of per-module Pareto points whose longest path fits the SLO."""
    check_limits(dag, limits)
    order = dag.topo_order()
    fronts = {}
    nodes = 0
    for m in order:
        f = enumerate_module_schedules(dag.rates[m], dag.modules[m], dag.slo, policy, limits)
        if f.partial:
            # a truncated frontier is no longer a lower bound
            raise OracleLimitExceeded(f"{m}: search exceeded {limits.max_nodes} nodes")
        if not f.points:
            raise Infeasible(f"{m}: no schedule within the SLO")
        fronts[m] = f.points
        nodes += f.nodes
    min_rest = [0.0] * (len(order) + 1)
    for i in range(len(order) - 1, -1, -1):
        min_rest[i] = min_rest[i + 1] + fronts[order[i]][0].cost
    best: list = [math.inf, None]
    into: dict[str, float] = {}
    chosen: dict[str, ParetoPoint] = {}

    def rec(i: int, cost: float) -> None:
        if cost + min_rest[i] >= best[0] - EPS:
            return
        if i == len(order):
            best[0], best[1] = cost, dict(chosen)
            return
        m = order[i]
        base = max((into[p] for p in dag.parents(m)), default=0.0)
        for pt in fronts[m]:
            if base + pt.wcl > dag.slo + EPS:
                continue
            into[m] = base + pt.wcl
            chosen[m] = pt
            rec(i + 1, cost + pt.cost)
        into.pop(m, None)
        chosen.pop(m, None)

    rec(0, 0.0)
    if best[1] is None:
        raise Infeasible("no combination of module schedules fits the SLO")
    schedules = {m: pt.schedule for m, pt in best[1].items()}
    wcl = {m: s.wcl for m, s in schedules.items()}
    return SessionPlan(wcl, schedules, sum(s.cost for s in schedules.values()), e2e_latency(dag, wcl), {"nodes": nodes})
