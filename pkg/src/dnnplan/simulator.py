"""Deterministic replay of one module's schedule under a dispatch policy.

The frontend sees a single request stream at the schedule's total rate
(real plus dummy). Under TC each machine opens batches at its assigned rate,
in ratio order, and an opening is only admitted when every open batch can
still fill before its collection deadline ``b/w``; each request joins the
open batch with the earliest deadline. Under RR the frontend deals single requests round robin inside
each group, with per-cycle group quotas proportional to assigned rate, and
machines batch locally. DT deals single requests to all machines by smooth
weighted round robin and ships each machine's requests once a batch is full.

Two latency accountings are recorded per request: ``request`` (completion
minus arrival) and ``cycle`` (completion minus the start of the batch's
collection window, i.e. the arrival of the request just before the batch's
first request in the global stream).
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import IO, Optional

from .dispatch import DispatchPolicy, TierView, remaining_workloads, tier_wcl
from .model import EPS, ModuleSchedule, PlanningError

MIN_CYCLES = 10


@dataclass(frozen=True)
class SimConfig:
    duration: Optional[float] = None  # None → 40 cycles
    arrival: str = "uniform"  # uniform | poisson
    seed: int = 0
    accounting: str = "cycle"  # cycle | request
    phase: float = 1.0  # first arrival at phase / rate

    def __post_init__(self) -> None:
        if self.arrival not in ("uniform", "poisson"):
            raise PlanningError(f"unknown arrival process {self.arrival!r}")
        if self.accounting not in ("cycle", "request"):
            raise PlanningError(f"unknown accounting {self.accounting!r}")


@dataclass
class Machine:
    id: str
    view: TierView
    group: int

    @property
    def batch(self) -> int:
        return self.view.config.batch

    @property
    def duration(self) -> float:
        return self.view.config.duration


@dataclass
class RequestRecord:
    id: int
    arrival: float
    machine: str = ""
    batch: int = -1
    dispatch: float = math.nan
    complete: float = math.nan
    anchor: float = 0.0
    dummy: bool = False
    flushed: bool = False

    def latency(self, accounting: str) -> float:
        return self.complete - (self.anchor if accounting == "cycle" else self.arrival)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "arrival": self.arrival,
            "machine": self.machine,
            "batch": self.batch,
            "dispatch": self.dispatch,
            "complete": self.complete,
        }


@dataclass
class SimTrace:
    policy: DispatchPolicy
    config: SimConfig
    duration: float
    machines: list[Machine]
    requests: list[RequestRecord]
    busy: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    def counted(self, include_dummy: bool = False) -> list[RequestRecord]:
        return [r for r in self.requests if not r.flushed and (include_dummy or not r.dummy)]

    def write_jsonl(self, fh: IO[str]) -> None:
        for r in self.requests:
            fh.write(json.dumps(r.to_json(), sort_keys=False) + "\n")


@dataclass(frozen=True)
class SimSummary:
    max_latency: float
    p50: float
    p99: float
    max_latency_with_dummy: float
    utilization: dict[str, float]
    served_rate: dict[str, float]
    requests: int


def _percentile(sorted_vals: list[float], q: float) -> float:
    if not sorted_vals:
        return 0.0
    idx = max(0, math.ceil(q * len(sorted_vals)) - 1)
    return sorted_vals[idx]


def build_machines(schedule: ModuleSchedule) -> list[Machine]:
    out = []
    for g, v in enumerate(remaining_workloads(schedule)):
        kind = "p" if v.partial else "f"
        for j in range(v.machines):
            out.append(Machine(f"t{v.tier_index}{kind}{j}-{v.config.label}", v, g))
    return out


def cycle_length(schedule: ModuleSchedule) -> float:
    """Longest per-machine batch period: d for a full machine, b/f for a partial one."""
    return max(v.config.batch / v.machine_rate for v in remaining_workloads(schedule))


def _arrivals(total: float, horizon: float, sim: SimConfig) -> list[float]:
    if sim.arrival == "uniform":
        n = int(math.floor(horizon * total + EPS))
        return [(k - 1 + sim.phase) / total for k in range(1, n + 1) if (k - 1 + sim.phase) / total <= horizon + EPS]
    rng = random.Random(sim.seed)
    out = []
    t = 0.0
    while True:
        t += rng.expovariate(total)
        if t > horizon:
            return out
        out.append(t)


def _edf_feasible(now: float, gap: float, need: list[tuple[float, int]]) -> bool:
    """Can batches needing ``k`` more requests by deadline ``D`` all be served, earliest deadline first?"""
    count = 0
    for deadline, k in sorted(need):
        count += k
        if now + (count - 1) * gap > deadline + EPS:
            return False
    return True


def _dispatch_tc(reqs: list[RequestRecord], machines: list[Machine], total: float) -> list[tuple[Machine, list[RequestRecord], float]]:
    # A machine opens a batch at anchor a when it is due at its assigned rate
    # (the machines of a group start staggered over one period) and free by
    # a + b/w, so a batch gathered at the residual rate w never waits past
    # its bound. An opening is admitted only if every open batch can still
    # close by its deadline; requests go to the open batch with the earliest
    # deadline. When nothing can open cleanly, the machine with the smallest
    # projected overshoot takes the request (lower tiers absorb the rounding
    # that a discrete arrival grid forces on full machines).
    n = len(machines)
    slack = [m.batch / m.view.remaining_workload for m in machines]
    period = [m.batch / m.view.machine_rate for m in machines]
    gap = 1.0 / total
    free = [0.0] * n
    due = [0.0] * n
    members: dict[int, list[int]] = {}
    for i, m in enumerate(machines):
        members.setdefault(m.group, []).append(i)
    for idx in members.values():
        for k, i in enumerate(idx):
            due[i] = k * period[i] / len(idx)
    open_: dict[int, list[RequestRecord]] = {}
    anchor: dict[int, float] = {}
    deadline: dict[int, float] = {}
    batches = []
    prev = 0.0

    def open_batch(i: int, paced: bool) -> None:
        open_[i], anchor[i], deadline[i] = [], prev, prev + slack[i]
        # a forced opening restarts the machine's rate schedule from now
        due[i] = due[i] + period[i] if paced else max(due[i], prev) + period[i]

    def overshoot(j: int, now: float) -> float:
        m = machines[j]
        close = now + (m.batch - 1) * gap
        return max(close, free[j]) - prev - slack[j]

    for r in reqs:
        ready = sorted(
            (i for i in range(n) if i not in open_ and due[i] <= prev + EPS and free[i] <= prev + slack[i] + EPS),
            key=lambda i: (machines[i].group, due[i], i),
        )
        for i in ready:
            need = [(deadline[j], machines[j].batch - len(open_[j])) for j in open_]
            if _edf_feasible(r.arrival, gap, need + [(prev + slack[i], machines[i].batch)]):
                open_batch(i, paced=True)
                break
        if not open_:
            i = min(range(n), key=lambda j: (max(overshoot(j, r.arrival), 0.0), due[j] > prev + EPS, machines[j].group, j))
            open_batch(i, paced=False)
        i = min(open_, key=lambda j: (deadline[j], machines[j].group, j))
        open_[i].append(r)
        if len(open_[i]) == machines[i].batch:
            free[i] = max(r.arrival, free[i]) + machines[i].duration
            batches.append((machines[i], open_.pop(i), anchor[i]))
        prev = r.arrival
    for i in sorted(open_):
        if open_[i]:
            batches.append((machines[i], open_[i], anchor[i]))
    return batches


def _dispatch_local(
    reqs: list[RequestRecord], machines: list[Machine], policy: DispatchPolicy
) -> list[tuple[Machine, list[RequestRecord], float]]:
    queues: list[list[RequestRecord]] = [[] for _ in machines]
    if policy is DispatchPolicy.RR:
        groups: dict[int, list[int]] = {}
        for idx, m in enumerate(machines):
            groups.setdefault(m.group, []).append(idx)
        rate = {g: sum(machines[i].view.machine_rate for i in idx) for g, idx in groups.items()}
        first = machines[groups[0][0]]
        period = len(groups[0]) * first.batch / rate[0]
        credit = {g: 0.0 for g in groups}
        rotation = {g: 0 for g in groups}
        pos = 0
        while pos < len(reqs):
            for g in sorted(groups):
                credit[g] += rate[g] * period
                quota = int(math.floor(credit[g] + 1e-6))
                credit[g] -= quota
                members = groups[g]
                for _ in range(quota):
                    if pos >= len(reqs):
                        break
                    queues[members[rotation[g]]].append(reqs[pos])
                    rotation[g] = (rotation[g] + 1) % len(members)
                    pos += 1
    else:
        weights = [m.view.machine_rate for m in machines]
        total_w = sum(weights)
        current = [0.0] * len(machines)
        for r in reqs:
            for i, w in enumerate(weights):
                current[i] += w
            i = max(range(len(machines)), key=lambda j: (current[j], -j))
            current[i] -= total_w
            queues[i].append(r)
    prev_arrival = {}
    last = 0.0
    for r in reqs:
        prev_arrival[r.id] = last
        last = r.arrival
    batches = []
    for i, m in enumerate(machines):
        q = queues[i]
        for s in range(0, len(q), m.batch):
            members = q[s : s + m.batch]
            batches.append((m, members, prev_arrival[members[0].id]))
    return batches


def simulate(schedule: ModuleSchedule, rate: float, policy: DispatchPolicy, sim: SimConfig = SimConfig()):
    """Replay ``schedule`` carrying ``rate`` real req/s (dummy injected on top); returns (trace, summary)."""
    if abs(schedule.real_rate - rate) > 1e-6 * max(1.0, rate):
        raise PlanningError(f"schedule carries {schedule.real_rate:.9g} req/s, expected {rate:.9g}")
    policy = DispatchPolicy.parse(policy)
    machines = build_machines(schedule)
    total = schedule.total_rate
    cyc = cycle_length(schedule)
    horizon = sim.duration if sim.duration is not None else 40 * cyc
    if horizon < MIN_CYCLES * cyc - EPS:
        raise PlanningError(f"duration {horizon:.6g}s covers fewer than {MIN_CYCLES} cycles of {cyc:.6g}s")
    times = _arrivals(total, horizon, sim)
    dum = schedule.dummy_rate
    reqs = []
    for k, t in enumerate(times, start=1):
        is_dummy = dum > 0 and math.floor(k * dum / total + EPS) > math.floor((k - 1) * dum / total + EPS)
        reqs.append(RequestRecord(k, t, dummy=is_dummy))

    if policy is DispatchPolicy.TC:
        batches = _dispatch_tc(reqs, machines, total)
    else:
        batches = _dispatch_local(reqs, machines, policy)

    # execute batches machine by machine, in close order
    busy: dict[str, list[tuple[float, float]]] = {m.id: [] for m in machines}
    free = {m.id: 0.0 for m in machines}
    per_machine: dict[str, list] = {m.id: [] for m in machines}
    for entry in batches:
        per_machine[entry[0].id].append(entry)
    batch_seq = sorted(batches, key=lambda e: (e[1][-1].arrival, e[0].id))
    bid = {id(e[1]): n for n, e in enumerate(batch_seq)}
    for mid, entries in per_machine.items():
        entries.sort(key=lambda e: e[1][-1].arrival)
        for m, members, anchor in entries:
            close = members[-1].arrival
            flushed = len(members) < m.batch
            start = max(close, free[mid])
            end = start + m.duration
            free[mid] = end
            busy[mid].append((start, end))
            for r in members:
                r.machine, r.batch, r.dispatch, r.complete = mid, bid[id(members)], start, end
                r.anchor = anchor
                r.flushed = flushed

    trace = SimTrace(policy, sim, horizon, machines, reqs, busy)
    return trace, summarize(trace)


def summarize(trace: SimTrace) -> SimSummary:
    acc = trace.config.accounting
    real = sorted(r.latency(acc) for r in trace.counted())
    every = [r.latency(acc) for r in trace.counted(include_dummy=True)]
    util = {}
    served = {}
    span = max((r.arrival for r in trace.requests), default=0.0) or trace.duration
    for m in trace.machines:
        util[m.id] = sum(min(e, trace.duration) - s for s, e in trace.busy[m.id] if s < trace.duration) / trace.duration
        n = sum(1 for r in trace.requests if r.machine == m.id and not r.flushed)
        served[m.id] = n / span if span > 0 else 0.0
    return SimSummary(
        max(real, default=0.0), _percentile(real, 0.5), _percentile(real, 0.99),
        max(every, default=0.0), util, served, len(real),
    )


@dataclass(frozen=True)
class MachineBound:
    machine: str
    bound: float
    max_latency: float
    slack: float
    violations: tuple[int, ...]


@dataclass(frozen=True)
class BoundReport:
    ok: bool
    machines: tuple[MachineBound, ...]

    @property
    def violations(self) -> list[int]:
        return [v for m in self.machines for v in m.violations]

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "machines": [
                {"machine": m.machine, "bound": m.bound, "max_latency": m.max_latency, "slack": m.slack,
                 "violations": list(m.violations)}
                for m in self.machines
            ],
        }


def check_bound(trace: SimTrace, schedule: ModuleSchedule, policy: DispatchPolicy) -> BoundReport:
    """Compare each machine's worst cycle-anchored latency with its analytic bound."""
    if trace.config.arrival != "uniform":
        raise PlanningError("bound checks need deterministic arrivals")
    policy = DispatchPolicy.parse(policy)
    rows = []
    by_machine: dict[str, list[RequestRecord]] = {}
    for r in trace.counted(include_dummy=True):
        by_machine.setdefault(r.machine, []).append(r)
    for m in trace.machines:
        bound = tier_wcl(m.view, policy)
        recs = by_machine.get(m.id, [])
        worst = max((r.latency("cycle") for r in recs), default=0.0)
        bad = tuple(r.id for r in recs if r.latency("cycle") > bound + EPS)
        rows.append(MachineBound(m.id, bound, worst, bound - worst, bad))
    return BoundReport(all(not r.violations for r in rows), tuple(rows))
