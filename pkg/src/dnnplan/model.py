"""Domain types and the frame-rate-proportional cost model.

Everything here is an immutable value object. Rates are req/sec, durations
and latencies are seconds, prices are cost units per machine-second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

EPS = 1e-9


class PlanningError(ValueError):
    """Raised when inputs violate a documented precondition."""


class Infeasible(Exception):
    """No configuration set can meet the latency budget or SLO."""


@dataclass(frozen=True)
class HardwareType:
    name: str
    unit_price: float

    def __post_init__(self) -> None:
        if not (self.unit_price > 0 and math.isfinite(self.unit_price)):
            raise PlanningError(f"hardware {self.name!r}: unit_price must be positive")


@dataclass(frozen=True)
class ConfigProfile:
    """One profiled (batch size, hardware) measurement for a module."""

    module_id: str
    hardware: HardwareType
    batch: int
    duration: float

    def __post_init__(self) -> None:
        if int(self.batch) != self.batch or self.batch < 1:
            raise PlanningError(f"{self.module_id}: batch must be a positive integer")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise PlanningError(f"{self.module_id}: duration must be positive")

    @property
    def throughput(self) -> float:
        return self.batch / self.duration

    @property
    def price(self) -> float:
        return self.hardware.unit_price

    @property
    def ratio(self) -> float:
        """Throughput-cost ratio, the ranking key for allocation and dispatch."""
        return self.throughput / self.hardware.unit_price

    @property
    def label(self) -> str:
        return f"{self.hardware.name}/b{self.batch}"


def _order_key(c: ConfigProfile):
    return (-c.ratio, -c.throughput, c.batch, c.hardware.name)


def canonical_order(profile: "ModuleProfile | Iterable[ConfigProfile]") -> list[ConfigProfile]:
    """Sort configs by ratio descending; ties by throughput desc, batch asc, hardware name."""
    entries = profile.entries if isinstance(profile, ModuleProfile) else list(profile)
    return sorted(entries, key=_order_key)


@dataclass(frozen=True)
class ModuleProfile:
    """All candidate configurations of one module, kept in canonical order."""

    module_id: str
    entries: tuple[ConfigProfile, ...]

    def __post_init__(self) -> None:
        seen = set()
        for e in self.entries:
            key = (e.hardware.name, e.batch)
            if key in seen:
                raise PlanningError(f"{self.module_id}: duplicate config {key}")
            seen.add(key)
            if e.module_id != self.module_id:
                raise PlanningError(f"{self.module_id}: entry belongs to {e.module_id}")
        object.__setattr__(self, "entries", tuple(sorted(self.entries, key=_order_key)))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def index(self, config: ConfigProfile) -> int:
        return self.entries.index(config)


@dataclass(frozen=True)
class AppDag:
    """Application graph. Construction does not validate; see :func:`validate_dag`."""

    modules: Mapping[str, ModuleProfile]
    edges: tuple[tuple[str, str], ...]
    rates: Mapping[str, float]
    slo: float

    def parents(self, module_id: str) -> frozenset[str]:
        return frozenset(a for a, b in self.edges if b == module_id)

    def children(self, module_id: str) -> frozenset[str]:
        return frozenset(b for a, b in self.edges if a == module_id)

    def topo_order(self) -> list[str]:
        """Kahn's algorithm, ties by module id so the order is deterministic."""
        indeg = {m: 0 for m in self.modules}
        for _, b in self.edges:
            indeg[b] += 1
        ready = sorted(m for m, k in indeg.items() if k == 0)
        order = []
        while ready:
            m = ready.pop(0)
            order.append(m)
            for c in sorted(self.children(m)):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    ready.sort()
        if len(order) != len(self.modules):
            raise PlanningError("cycle detected")
        return order

    def scaled_prices(self, k: float) -> "AppDag":
        """Copy of the DAG with every unit price multiplied by ``k``."""
        hw: dict[str, HardwareType] = {}
        modules = {}
        for mid, prof in self.modules.items():
            entries = []
            for e in prof.entries:
                h = hw.setdefault(e.hardware.name, HardwareType(e.hardware.name, e.hardware.unit_price * k))
                entries.append(ConfigProfile(mid, h, e.batch, e.duration))
            modules[mid] = ModuleProfile(mid, tuple(entries))
        return AppDag(modules, self.edges, self.rates, self.slo)


def validate_dag(dag: AppDag) -> list[str]:
    """Return every invariant violation; an empty list means the DAG is well-formed."""
    errors = []
    if not (dag.slo > 0 and math.isfinite(dag.slo)):
        errors.append(f"non-positive SLO: {dag.slo}")
    if not dag.modules:
        errors.append("no modules")
    for mid, prof in dag.modules.items():
        if len(prof.entries) == 0:
            errors.append(f"empty profile: {mid}")
        if mid not in dag.rates:
            errors.append(f"missing rate: {mid}")
        elif not (dag.rates[mid] > 0 and math.isfinite(dag.rates[mid])):
            errors.append(f"non-positive rate: {mid}")
    for mid in dag.rates:
        if mid not in dag.modules:
            errors.append(f"missing profile: {mid}")
    for a, b in dag.edges:
        for end in (a, b):
            if end not in dag.modules:
                errors.append(f"unknown edge endpoint: ({a}, {b})")
                break
    if not any(e.startswith("unknown edge") for e in errors):
        try:
            dag.topo_order()
        except PlanningError:
            errors.append("cycle detected among edges " + ", ".join(f"({a},{b})" for a, b in dag.edges))
    return errors


@dataclass(frozen=True)
class Tier:
    """Machines sharing one config: ``full_machines`` at full capacity plus an optional partial one."""

    config: ConfigProfile
    full_machines: int
    partial_fraction: float
    assigned_rate: float

    def __post_init__(self) -> None:
        if self.full_machines < 0 or not (0 <= self.partial_fraction < 1):
            raise PlanningError(f"bad tier machine counts {self.full_machines}, {self.partial_fraction}")
        if self.full_machines + self.partial_fraction <= 0:
            raise PlanningError("empty tier")
        expect = (self.full_machines + self.partial_fraction) * self.config.throughput
        if abs(expect - self.assigned_rate) > EPS * max(1.0, expect):
            raise PlanningError(f"tier rate {self.assigned_rate} != {expect}")

    @classmethod
    def of(cls, config: ConfigProfile, full: int, partial: float = 0.0) -> "Tier":
        return cls(config, full, partial, (full + partial) * config.throughput)

    @classmethod
    def for_rate(cls, config: ConfigProfile, rate: float) -> "Tier":
        """Smallest tier carrying ``rate``: floor full machines plus the fractional remainder."""
        n = rate / config.throughput
        full = math.floor(n + EPS)
        partial = n - full
        if partial < EPS:
            partial = 0.0
        return cls(config, full, partial, rate)

    @property
    def machines(self) -> float:
        return self.full_machines + self.partial_fraction

    @property
    def cost(self) -> float:
        return self.config.price * self.machines

    def notation(self) -> str:
        """Tier rendered as ``T (n⊗b)``."""
        return f"{_fmt(self.assigned_rate)} ({self.machines:.1f}⊗{self.config.batch})"


def _fmt(x: float) -> str:
    r = round(x)
    return str(r) if abs(x - r) < 1e-6 else f"{x:.4g}"


@dataclass(frozen=True)
class ModuleSchedule:
    module_id: str
    tiers: tuple[Tier, ...]
    dummy_rate: float
    wcl: float
    cost: float

    @property
    def total_rate(self) -> float:
        return sum(t.assigned_rate for t in self.tiers)

    @property
    def real_rate(self) -> float:
        return self.total_rate - self.dummy_rate

    def notation(self) -> str:
        return ", ".join(t.notation() for t in self.tiers)


def schedule_cost(schedule: ModuleSchedule | Sequence[Tier]) -> float:
    """Sum of price-weighted machines; dummy-carrying machines count at full occupancy."""
    tiers = schedule.tiers if isinstance(schedule, ModuleSchedule) else schedule
    return sum(t.config.price * (t.full_machines + t.partial_fraction) for t in tiers)


@dataclass(frozen=True)
class SessionPlan:
    budgets: Mapping[str, float]
    schedules: Mapping[str, ModuleSchedule]
    total_cost: float
    e2e_latency: float
    extras: Mapping[str, object] = field(default_factory=dict, compare=False)


def _path_lengths(dag: AppDag, weight: Mapping[str, float]) -> tuple[dict[str, float], dict[str, float]]:
    """Longest weighted path ending at (``into``) and starting from (``out``) each module, inclusive."""
    order = dag.topo_order()
    into: dict[str, float] = {}
    for m in order:
        into[m] = weight[m] + max((into[p] for p in dag.parents(m)), default=0.0)
    out: dict[str, float] = {}
    for m in reversed(order):
        out[m] = weight[m] + max((out[c] for c in dag.children(m)), default=0.0)
    return into, out


def e2e_latency(dag: AppDag, wcl_by_module: Mapping[str, float]) -> float:
    """Longest path with module wcl as node weight; edges carry no latency."""
    missing = [m for m in dag.modules if m not in wcl_by_module]
    if missing:
        raise PlanningError(f"missing wcl entry: {', '.join(sorted(missing))}")
    into, _ = _path_lengths(dag, wcl_by_module)
    return max(into.values())


def path_through(dag: AppDag, weight: Mapping[str, float]) -> dict[str, float]:
    """Length of the longest path passing through each module."""
    into, out = _path_lengths(dag, weight)
    return {m: into[m] + out[m] - weight[m] for m in dag.modules}


def longest_path_count(dag: AppDag) -> int:
    return int(round(e2e_latency(dag, {m: 1.0 for m in dag.modules})))
