"""Splitting the end-to-end SLO into per-module latency budgets.

The main method starts every module at its least cost-efficient config and
repeatedly applies the upgrade with the best latency-cost efficiency (cost
saved per second of added worst-case latency) that keeps the DAG within the
SLO. Node merging lets sibling modules with identical neighbours upgrade
together; cost-direct re-plays the tail of the history greedily by absolute
cost saved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .dispatch import DispatchPolicy, planning_wcl
from .model import EPS, AppDag, ConfigProfile, Infeasible, PlanningError, e2e_latency, longest_path_count

INF = math.inf


@dataclass(frozen=True)
class SplitterOptions:
    method: str = "lc"  # lc | throughput | quantized | even
    step: float = 0.01
    enable_merge: bool = True
    cost_direct_r: int = 3

    def __post_init__(self) -> None:
        if self.method not in ("lc", "throughput", "quantized", "even"):
            raise PlanningError(f"unknown split method {self.method!r}")
        if self.method == "quantized" and not self.step > 0:
            raise PlanningError("quantized step must be positive")
        if self.cost_direct_r < 0:
            raise PlanningError("cost_direct_r must be >= 0")


@dataclass(frozen=True)
class Operation:
    """One applied upgrade; a merged operation touches several modules at once."""

    changes: tuple[tuple[str, ConfigProfile, ConfigProfile], ...]
    score: float

    def to_json(self) -> dict:
        return {
            "changes": [
                {"module": m, "from": old.label, "to": new.label} for m, old, new in self.changes
            ],
            "score": None if math.isinf(self.score) else self.score,
        }


@dataclass
class SplitState:
    current: dict[str, ConfigProfile]
    history: list[Operation] = field(default_factory=list)

    def copy(self) -> "SplitState":
        return SplitState(dict(self.current), list(self.history))

    def apply(self, op: Operation) -> None:
        for m, old, new in op.changes:
            if self.current[m] != old:
                raise PlanningError(f"operation does not match state at {m}")
            self.current[m] = new
        self.history.append(op)


def default_state(dag: AppDag) -> SplitState:
    """Least cost-efficient config per module: min ratio, then highest price, then smallest batch."""
    cur = {}
    for m, prof in dag.modules.items():
        cur[m] = min(prof.entries, key=lambda c: (c.ratio, -c.price, c.batch, c.hardware.name))
    return SplitState(cur)


def module_cost(rate: float, config: ConfigProfile) -> float:
    return config.price * rate / config.throughput


def state_cost(dag: AppDag, state: SplitState) -> float:
    return sum(module_cost(dag.rates[m], c) for m, c in state.current.items())


def state_latencies(dag: AppDag, state: SplitState, policy: DispatchPolicy) -> dict[str, float]:
    return {m: planning_wcl(c, dag.rates[m], policy) for m, c in state.current.items()}


def latency_cost_efficiency(
    rate: float, prev: ConfigProfile, new: ConfigProfile, policy: DispatchPolicy
) -> Optional[float]:
    """Cost saved per second of added wcl; ``None`` when the move saves nothing, ``inf`` when it dominates."""
    saved = module_cost(rate, prev) - module_cost(rate, new)
    if saved <= EPS:
        return None
    added = planning_wcl(new, rate, policy) - planning_wcl(prev, rate, policy)
    if added <= 0:
        return INF
    return saved / added


def merge_supermodules(dag: AppDag) -> list[tuple[str, ...]]:
    """Group modules whose parent sets and child sets are both identical."""
    groups: dict[tuple, list[str]] = {}
    for m in sorted(dag.modules):
        key = (tuple(sorted(dag.parents(m))), tuple(sorted(dag.children(m))))
        groups.setdefault(key, []).append(m)
    return sorted(tuple(g) for g in groups.values())


@dataclass(frozen=True)
class _Cand:
    op: Operation
    saved: float
    key: tuple


def _single_candidates(dag: AppDag, state: SplitState, policy: DispatchPolicy, scorer) -> list[_Cand]:
    out = []
    for m in sorted(dag.modules):
        prev = state.current[m]
        for idx, new in enumerate(dag.modules[m].entries):
            if new == prev:
                continue
            score = scorer(dag.rates[m], prev, new)
            if score is None:
                continue
            saved = module_cost(dag.rates[m], prev) - module_cost(dag.rates[m], new)
            out.append(_Cand(Operation(((m, prev, new),), score), saved, (m, idx)))
    return out


def _feasible(dag: AppDag, state: SplitState, op: Operation, policy: DispatchPolicy, lat: dict[str, float]) -> bool:
    trial = dict(lat)
    for m, _, new in op.changes:
        trial[m] = planning_wcl(new, dag.rates[m], policy)
    return e2e_latency(dag, trial) <= dag.slo + EPS


def _merged_candidates(dag: AppDag, state: SplitState, policy: DispatchPolicy, lat: dict[str, float]) -> list[_Cand]:
    """Each member of a supernode moves to its own best applicable finite-LC upgrade."""
    out = []
    for group in merge_supermodules(dag):
        if len(group) < 2:
            continue
        changes = []
        for m in group:
            prev = state.current[m]
            best = None
            for new in dag.modules[m].entries:
                lc = latency_cost_efficiency(dag.rates[m], prev, new, policy)
                if lc is None or math.isinf(lc):
                    continue
                op = Operation(((m, prev, new),), lc)
                if not _feasible(dag, state, op, policy, lat):
                    continue
                if best is None or lc > best[0] + EPS:
                    best = (lc, new)
            if best is not None:
                changes.append((m, prev, best[1]))
        if len(changes) < 2:
            continue
        saved = sum(module_cost(dag.rates[m], p) - module_cost(dag.rates[m], n) for m, p, n in changes)
        old_lat = max(lat[m] for m, _, _ in changes)
        new_lat = max(planning_wcl(n, dag.rates[m], policy) for m, _, n in changes)
        added = new_lat - old_lat
        score = INF if added <= 0 else saved / added
        out.append(_Cand(Operation(tuple(changes), score), saved, ("~",) + group))
    return out


def _pick(cands: Sequence[_Cand], by: str) -> Optional[_Cand]:
    best = None
    for c in cands:
        if by == "saved":
            rank = (c.saved, 0.0)
        else:
            rank = (1.0 if math.isinf(c.op.score) else 0.0, c.op.score if not math.isinf(c.op.score) else c.saved, c.saved)
        if best is None or _greater(rank, best[0]) or (_equal(rank, best[0]) and c.key < best[1].key):
            best = (rank, c)
    return None if best is None else best[1]


def _greater(a: tuple, b: tuple) -> bool:
    for x, y in zip(a, b):
        if x > y + EPS:
            return True
        if x < y - EPS:
            return False
    return False


def _equal(a: tuple, b: tuple) -> bool:
    return all(abs(x - y) <= EPS for x, y in zip(a, b))


def _greedy(dag: AppDag, state: SplitState, policy: DispatchPolicy, by: str, merge: bool) -> SplitState:
    if by == "throughput":
        def scorer(rate, prev, new):
            gain = new.throughput - prev.throughput
            return gain if gain > EPS else None
    else:
        def scorer(rate, prev, new):
            return latency_cost_efficiency(rate, prev, new, policy)
    state = state.copy()
    while True:
        lat = state_latencies(dag, state, policy)
        cands = [c for c in _single_candidates(dag, state, policy, scorer) if _feasible(dag, state, c.op, policy, lat)]
        if merge and by != "throughput":
            cands += _merged_candidates(dag, state, policy, lat)
        choice = _pick(cands, "saved" if by == "saved" else "score")
        if choice is None:
            return state
        state.apply(choice.op)


def replay(dag: AppDag, history: Sequence[Operation]) -> SplitState:
    state = default_state(dag)
    for op in history:
        state.apply(op)
    return state


def cost_direct(state: SplitState, dag: AppDag, options: SplitterOptions, policy: DispatchPolicy) -> SplitState:
    """Undo the last R operations, redo them greedily by absolute cost saved, keep the cheaper result."""
    r = min(options.cost_direct_r, len(state.history))
    if r == 0:
        return state
    base = replay(dag, state.history[: len(state.history) - r])
    redone = _greedy(dag, base, policy, "saved", options.enable_merge)
    if state_cost(dag, redone) < state_cost(dag, state) - EPS:
        return redone
    return state


def lc_split_state(dag: AppDag, options: SplitterOptions, policy: DispatchPolicy) -> SplitState:
    state = default_state(dag)
    if e2e_latency(dag, state_latencies(dag, state, policy)) > dag.slo + EPS:
        raise Infeasible("default configuration already exceeds the SLO")
    by = "throughput" if options.method == "throughput" else "lc"
    state = _greedy(dag, state, policy, by, options.enable_merge)
    if by == "lc" and options.cost_direct_r > 0:
        state = cost_direct(state, dag, options, policy)
    return state


def split_latency(dag: AppDag, options: SplitterOptions, policy: DispatchPolicy) -> dict[str, float]:
    """Per-module budgets: the planning wcl of each module's final working config."""
    if options.method in ("even", "quantized"):
        raise PlanningError("use baseline_split for even/quantized methods")
    state = lc_split_state(dag, options, policy)
    return state_latencies(dag, state, policy)


def even_split(dag: AppDag) -> dict[str, float]:
    share = dag.slo / longest_path_count(dag)
    return {m: share for m in dag.modules}


def quantized_split(dag: AppDag, step: float, module_cost_at) -> dict[str, float]:
    """Exhaustive search over budgets on a ``step`` grid, minimising the summed schedule cost.

    ``module_cost_at(module_id, budget)`` returns the schedule cost or ``None``
    when the module cannot meet that budget.
    """
    levels = int(math.floor(dag.slo / step + 1e-6))
    if levels < 1:
        raise Infeasible("SLO smaller than one quantization step")
    # per module, keep only the smallest level reaching each strictly lower cost
    options: dict[str, list[tuple[int, float]]] = {}
    for m in sorted(dag.modules):
        pts = []
        best = INF
        for k in range(1, levels + 1):
            c = module_cost_at(m, k * step)
            if c is not None and c < best - EPS:
                best = c
                pts.append((k, c))
        if not pts:
            raise Infeasible(f"{m}: no budget on the grid is feasible")
        options[m] = pts
    order = dag.topo_order()
    floor_cost = {m: options[m][-1][1] for m in order}
    best: list = [INF, None]

    def feasible(assign: dict[str, int]) -> bool:
        into: dict[str, int] = {}
        for m in order:
            if m not in assign:
                continue
            into[m] = assign[m] + max((into[p] for p in dag.parents(m) if p in into), default=0)
            if into[m] > levels:
                return False
        return True

    def rec(i: int, assign: dict[str, int], cost: float) -> None:
        if cost + sum(floor_cost[m] for m in order[i:]) >= best[0] - EPS:
            return
        if i == len(order):
            best[0], best[1] = cost, dict(assign)
            return
        m = order[i]
        for k, c in options[m]:
            assign[m] = k
            if feasible(assign):
                rec(i + 1, assign, cost + c)
            del assign[m]

    rec(0, {}, 0.0)
    if best[1] is None:
        raise Infeasible("no quantized budget assignment fits the SLO")
    return {m: k * step for m, k in best[1].items()}


def baseline_split(dag: AppDag, options: SplitterOptions, policy: DispatchPolicy, module_cost_at=None) -> dict[str, float]:
    if options.method == "even":
        return even_split(dag)
    if options.method == "quantized":
        if module_cost_at is None:
            raise PlanningError("quantized split needs a module cost function")
        return quantized_split(dag, options.step, module_cost_at)
    return split_latency(dag, options, policy)
