"""Cost-minimizing planner for multi-module DNN serving under an end-to-end latency SLO."""

from __future__ import annotations

from .dispatch import DispatchPolicy, make_schedule, module_wcl, planning_wcl, remaining_workloads, tier_wcl
from .model import (
    AppDag,
    ConfigProfile,
    HardwareType,
    Infeasible,
    ModuleProfile,
    ModuleSchedule,
    PlanningError,
    SessionPlan,
    Tier,
    canonical_order,
    e2e_latency,
    schedule_cost,
    validate_dag,
)
from .oracle import OracleLimitExceeded, OracleLimits, optimal_plan
from .pipeline import PlanOptions, plan_session
from .scheduler import SchedulerOptions, generate_config, schedule_module
from .simulator import SimConfig, check_bound, simulate
from .splitter import SplitterOptions, split_latency

__all__ = [
    "AppDag",
    "ConfigProfile",
    "DispatchPolicy",
    "HardwareType",
    "Infeasible",
    "ModuleProfile",
    "ModuleSchedule",
    "OracleLimitExceeded",
    "OracleLimits",
    "PlanOptions",
    "PlanningError",
    "SchedulerOptions",
    "SessionPlan",
    "SimConfig",
    "SplitterOptions",
    "Tier",
    "canonical_order",
    "check_bound",
    "e2e_latency",
    "generate_config",
    "make_schedule",
    "module_wcl",
    "optimal_plan",
    "plan_session",
    "planning_wcl",
    "remaining_workloads",
    "schedule_cost",
    "schedule_module",
    "simulate",
    "split_latency",
    "tier_wcl",
    "validate_dag",
]
