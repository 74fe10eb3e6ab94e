"""Workload and plan JSON (de)serialization."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping, Optional

import jsonschema

from .model import AppDag, ConfigProfile, HardwareType, ModuleProfile, ModuleSchedule, PlanningError, SessionPlan, Tier, validate_dag

_POS = {"type": "number", "exclusiveMinimum": 0}

WORKLOAD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["hardware", "modules", "edges", "rates", "slo"],
    "properties": {
        "hardware": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "unit_price"],
                "properties": {"name": {"type": "string", "minLength": 1}, "unit_price": _POS},
            },
        },
        "modules": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "profiles"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "profiles": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["hardware", "batch", "duration"],
                            "properties": {
                                "hardware": {"type": "string"},
                                "batch": {"type": "integer", "minimum": 1},
                                "duration": _POS,
                            },
                        },
                    },
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
        },
        "rates": {"type": "object", "additionalProperties": _POS},
        "slo": _POS,
    },
}


def _reject_constant(name: str) -> float:
    raise PlanningError(f"non-finite number {name} in workload")


def loads_json(text: str) -> Any:
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise PlanningError(f"invalid JSON: {exc}") from None


def workload_from_dict(data: Mapping[str, Any]) -> AppDag:
    """Validate a workload document and build the DAG; raises :class:`PlanningError` listing problems."""
    validator = jsonschema.Draft202012Validator(WORKLOAD_SCHEMA)
    problems = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if problems:
        raise PlanningError("; ".join(f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in problems))
    hw: dict[str, HardwareType] = {}
    for h in data["hardware"]:
        if h["name"] in hw:
            raise PlanningError(f"duplicate hardware name {h['name']!r}")
        hw[h["name"]] = HardwareType(h["name"], float(h["unit_price"]))
    modules: dict[str, ModuleProfile] = {}
    for m in data["modules"]:
        mid = m["id"]
        if mid in modules:
            raise PlanningError(f"duplicate module id {mid!r}")
        entries = []
        for p in m["profiles"]:
            if p["hardware"] not in hw:
                raise PlanningError(f"{mid}: unknown hardware {p['hardware']!r}")
            entries.append(ConfigProfile(mid, hw[p["hardware"]], int(p["batch"]), float(p["duration"])))
        modules[mid] = ModuleProfile(mid, tuple(entries))
    dag = AppDag(
        modules,
        tuple((a, b) for a, b in data["edges"]),
        {k: float(v) for k, v in data["rates"].items()},
        float(data["slo"]),
    )
    errors = validate_dag(dag)
    if errors:
        raise PlanningError("; ".join(errors))
    return dag


def load_workload(path: str | Path) -> AppDag:
    return workload_from_dict(loads_json(Path(path).read_text()))


def workload_to_dict(dag: AppDag) -> dict:
    hw: dict[str, float] = {}
    modules = []
    for mid in sorted(dag.modules):
        profiles = []
        for e in sorted(dag.modules[mid].entries, key=lambda c: (c.hardware.name, c.batch)):
            hw[e.hardware.name] = e.hardware.unit_price
            profiles.append({"hardware": e.hardware.name, "batch": e.batch, "duration": e.duration})
        modules.append({"id": mid, "profiles": profiles})
    return {
        "hardware": [{"name": n, "unit_price": p} for n, p in sorted(hw.items())],
        "modules": modules,
        "edges": [list(e) for e in dag.edges],
        "rates": {m: dag.rates[m] for m in sorted(dag.rates)},
        "slo": dag.slo,
    }


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def schedule_to_dict(s: ModuleSchedule) -> dict:
    return {
        "tiers": [
            {
                "hardware": t.config.hardware.name,
                "batch": t.config.batch,
                "full_machines": t.full_machines,
                "partial_fraction": t.partial_fraction,
                "assigned_rate": t.assigned_rate,
                "notation": t.notation(),
            }
            for t in s.tiers
        ],
        "notation": s.notation(),
        "dummy_rate": s.dummy_rate,
        "wcl": s.wcl,
        "cost": s.cost,
    }


def plan_to_dict(plan: SessionPlan, policy: str, runtime_ms: Optional[float] = None) -> dict:
    """Report form of a plan; ``runtime_ms`` is only included when given, keeping reports reproducible."""
    out = {
        "policy": policy,
        "total_cost": plan.total_cost,
        "e2e_latency": plan.e2e_latency,
        "budgets": {m: plan.budgets[m] for m in sorted(plan.budgets)},
        "modules": {m: schedule_to_dict(plan.schedules[m]) for m in sorted(plan.schedules)},
    }
    for key in ("split_history", "reassign_rounds", "recombined"):
        if key in plan.extras:
            out[key] = plan.extras[key]
    if runtime_ms is not None:
        out["runtime_ms"] = runtime_ms
    return out


def _find_config(dag: AppDag, mid: str, hw: str, batch: int) -> ConfigProfile:
    for c in dag.modules[mid].entries:
        if c.hardware.name == hw and c.batch == batch:
            return c
    raise PlanningError(f"plan refers to unknown config {hw}/b{batch} of {mid}")


def plan_from_dict(data: Mapping[str, Any], dag: AppDag) -> SessionPlan:
    """Rebuild a plan against its workload; raises :class:`PlanningError` on any mismatch."""
    try:
        if set(data["modules"]) != set(dag.modules):
            raise PlanningError("plan modules do not match the workload")
        schedules = {}
        for mid, s in data["modules"].items():
            tiers = tuple(
                Tier(_find_config(dag, mid, t["hardware"], t["batch"]), int(t["full_machines"]),
                     float(t["partial_fraction"]), float(t["assigned_rate"]))
                for t in s["tiers"]
            )
            schedules[mid] = ModuleSchedule(mid, tiers, float(s["dummy_rate"]), float(s["wcl"]), float(s["cost"]))
        extras = {k: data[k] for k in ("policy", "split_history", "reassign_rounds", "recombined") if k in data}
        return SessionPlan(
            {m: float(v) for m, v in data["budgets"].items()}, schedules,
            float(data["total_cost"]), float(data["e2e_latency"]), extras,
        )
    except (KeyError, TypeError) as exc:
        raise PlanningError(f"malformed plan: {exc}") from None


def load_plan(path: str | Path, dag: AppDag) -> SessionPlan:
    return plan_from_dict(loads_json(Path(path).read_text()), dag)

