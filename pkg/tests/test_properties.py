from __future__ import annotations

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dnnplan import (
    AppDag,
    ConfigProfile,
    DispatchPolicy,
    HardwareType,
    Infeasible,
    ModuleProfile,
    PlanOptions,
    SchedulerOptions,
    module_wcl,
    plan_session,
)
from dnnplan.model import EPS

HW = (HardwareType("gpu", 1.0), HardwareType("fast", 1.8))
BATCHES = (1, 2, 4, 8, 16, 32)


@st.composite
def profiles(draw, mid: str) -> ModuleProfile:
    base = draw(st.floats(0.01, 0.3))
    per = draw(st.floats(0.0, 0.05))
    picks = draw(st.lists(st.tuples(st.sampled_from(BATCHES), st.integers(0, 1)), min_size=1, max_size=5, unique=True))
    entries = []
    for b, h in picks:
        speed = 1.0 if h == 0 else 1.6
        entries.append(ConfigProfile(mid, HW[h], b, (base + per * b) / speed))
    return ModuleProfile(mid, tuple(entries))


@st.composite
def dags(draw) -> AppDag:
    n = draw(st.integers(1, 3))
    ids = [f"m{i}" for i in range(n)]
    mods = {m: draw(profiles(m)) for m in ids}
    shape = draw(st.sampled_from(("chain", "fork")))
    if shape == "fork" and n == 3:
        edges = (("m0", "m1"), ("m0", "m2"))
    else:
        edges = tuple(zip(ids, ids[1:]))
    rates = {m: draw(st.floats(1.0, 400.0)) for m in ids}
    slo = draw(st.floats(0.1, 4.0))
    return AppDag(mods, edges, rates, slo)


def _check(dag: AppDag, plan, policy: DispatchPolicy) -> None:
    assert plan.e2e_latency <= dag.slo + 1e-9
    for m, s in plan.schedules.items():
        # every partial tier carries less than one machine's throughput
        for t in s.tiers:
            assert 0 <= t.partial_fraction < 1
            assert abs(t.assigned_rate - (t.full_machines + t.partial_fraction) * t.config.throughput) <= 1e-6
        assert abs(sum(t.assigned_rate for t in s.tiers) - (dag.rates[m] + s.dummy_rate)) <= 1e-6 * max(1.0, dag.rates[m])
        assert s.dummy_rate >= 0
        assert module_wcl(s, policy) <= plan.budgets[m] + EPS
        assert abs(s.wcl - module_wcl(s, policy)) <= 1e-9


SETTINGS = settings(max_examples=150, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow])


@SETTINGS
@given(dags(), st.sampled_from(list(DispatchPolicy)), st.sampled_from((None, 1, 2)), st.booleans())
def test_plan_invariants(dag, policy, max_configs, dummy):
    opts = PlanOptions(scheduler=SchedulerOptions(policy=policy, max_configs=max_configs, enable_dummy=dummy))
    try:
        plan = plan_session(dag, opts)
    except Infeasible:
        return
    _check(dag, plan, policy)


@SETTINGS
@given(dags())
def test_dummy_never_hurts(dag):
    try:
        without = plan_session(dag, PlanOptions(scheduler=SchedulerOptions(enable_dummy=False)))
    except Infeasible:
        return
    assert plan_session(dag).total_cost <= without.total_cost + 1e-9


@SETTINGS
@given(dags())
def test_deterministic(dag):
    try:
        a = plan_session(dag)
    except Infeasible:
        return
    b = plan_session(dag)
    assert a.schedules == b.schedules and a.total_cost == b.total_cost
