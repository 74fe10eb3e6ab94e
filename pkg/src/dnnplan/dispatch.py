"""Worst-case latency of a configuration set under each dispatch policy.

TC (throughput-cost) sends batch-sized runs of consecutive requests to
machines in ratio order, so a machine collects its batch at the rate of its
remaining workload ``w``: ``L = d + b/w``. RR sends single requests round
robin and DT sends them at each machine's own throughput share; in both the
machine collects at its own per-machine rate, ``L = d + b/rate``, which is
``2d`` for a full machine.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .model import ConfigProfile, ModuleSchedule, PlanningError, Tier, _order_key, schedule_cost


class DispatchPolicy(enum.Enum):
    TC = "tc"
    RR = "rr"
    DT = "dt"

    @classmethod
    def parse(cls, value: "str | DispatchPolicy") -> "DispatchPolicy":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class TierView:
    """A dispatch group: the full machines of a tier, or its partial machine."""

    config: ConfigProfile
    remaining_workload: float
    machine_rate: float
    machines: int
    tier_index: int
    partial: bool = False

    @property
    def assigned_rate(self) -> float:
        return self.machine_rate * self.machines


def _tiers(schedule: ModuleSchedule | Sequence[Tier]) -> Sequence[Tier]:
    return schedule.tiers if isinstance(schedule, ModuleSchedule) else schedule


def check_order(tiers: Sequence[Tier]) -> None:
    keys = [_order_key(t.config) for t in tiers]
    if any(a >= b for a, b in zip(keys, keys[1:])):
        raise PlanningError("unordered tiers: configs must be distinct and in canonical order")
    if any(t.partial_fraction > 0 for t in tiers[:-1]):
        raise PlanningError("unordered tiers: only the last tier may hold a partial machine")


def remaining_workloads(schedule: ModuleSchedule | Sequence[Tier]) -> list[TierView]:
    """Split tiers into dispatch groups and attach each group's remaining workload.

    A partial machine is always its own group, after the full machines of the
    same config, and its ``w`` is just its own rate.
    """
    tiers = _tiers(schedule)
    check_order(tiers)
    groups: list[TierView] = []
    for i, t in enumerate(tiers):
        if t.full_machines:
            groups.append(TierView(t.config, 0.0, t.config.throughput, t.full_machines, i))
        if t.partial_fraction > 0:
            groups.append(TierView(t.config, 0.0, t.partial_fraction * t.config.throughput, 1, i, True))
    w = 0.0
    out = []
    for g in reversed(groups):
        w += g.assigned_rate
        out.append(TierView(g.config, w, g.machine_rate, g.machines, g.tier_index, g.partial))
    return out[::-1]


def tier_wcl(view: TierView, policy: DispatchPolicy) -> float:
    if view.remaining_workload <= 0 or view.machine_rate <= 0:
        raise PlanningError("remaining workload must be positive")
    c = view.config
    if policy is DispatchPolicy.TC:
        return c.duration + c.batch / view.remaining_workload
    return c.duration + c.batch / min(view.machine_rate, c.throughput)


def module_wcl(schedule: ModuleSchedule | Sequence[Tier], policy: DispatchPolicy) -> float:
    views = remaining_workloads(schedule)
    return max((tier_wcl(v, policy) for v in views), default=0.0)


def planning_wcl(config: ConfigProfile, rate: float, policy: DispatchPolicy) -> float:
    """Prospective wcl of serving ``rate`` (the unallocated workload) starting at ``config``."""
    if rate <= 0:
        raise PlanningError("unallocated rate must be positive")
    if policy is DispatchPolicy.TC:
        return config.duration + config.batch / rate
    return config.duration + config.batch / min(rate, config.throughput)


def make_schedule(module_id: str, tiers: Sequence[Tier], dummy_rate: float, policy: DispatchPolicy) -> ModuleSchedule:
    tiers = tuple(tiers)
    return ModuleSchedule(module_id, tiers, dummy_rate, module_wcl(tiers, policy), schedule_cost(tiers))
