from __future__ import annotations

import math

import pytest

from conftest import M3_ROWS, by_batch, profile
from dnnplan import (
    AppDag,
    ConfigProfile,
    DispatchPolicy,
    HardwareType,
    Infeasible,
    ModuleProfile,
    PlanOptions,
    SplitterOptions,
    plan_session,
    split_latency,
)
from dnnplan.dispatch import planning_wcl
from dnnplan.model import e2e_latency
from dnnplan.splitter import (
    cost_direct,
    default_state,
    even_split,
    latency_cost_efficiency,
    lc_split_state,
    merge_supermodules,
    replay,
    state_cost,
    state_latencies,
)
from dnnplan.synth import synthesize

TC = DispatchPolicy.TC
NO_CD = SplitterOptions(cost_direct_r=0)


def two_step(mid: str, hw: HardwareType, d_fast: float) -> ModuleProfile:
    """b=1 at d=0.1 and b=2 at ``d_fast``; at 10 req/s the upgrade adds ``d_fast`` of wcl."""
    return ModuleProfile(mid, (ConfigProfile(mid, hw, 1, 0.1), ConfigProfile(mid, hw, 2, d_fast)))


class TestDefaultState:
    def test_m3_min_ratio(self, m3_dag):
        assert default_state(m3_dag).current["M3"].batch == 2

    def test_single_config(self):
        p = profile("A", ((4, 0.3),))
        dag = AppDag({"A": p}, (), {"A": 5.0}, 1.0)
        assert default_state(dag).current["A"] == p.entries[0]

    def test_price_tie_break(self):
        cheap, dear = HardwareType("a", 1.0), HardwareType("b", 2.0)
        # r = 10 for both; the dearer hardware is the default
        p = ModuleProfile("A", (ConfigProfile("A", cheap, 1, 0.1), ConfigProfile("A", dear, 1, 0.05),
                                 ConfigProfile("A", cheap, 8, 0.2)))
        dag = AppDag({"A": p}, (), {"A": 5.0}, 1.0)
        assert default_state(dag).current["A"].hardware is dear


class TestLatencyCostEfficiency:
    def test_m1_b4(self, m1):
        c = by_batch(m1)
        assert latency_cost_efficiency(100, c[2], c[4], TC) == pytest.approx(50.0, abs=1e-9)

    def test_m1_b8(self, m1):
        c = by_batch(m1)
        assert latency_cost_efficiency(100, c[2], c[8], TC) == pytest.approx(18.1818, abs=1e-3)

    def test_m3_b8(self, m3):
        c = by_batch(m3)
        expect = (198 * 0.1 / 2 - 198 * 0.25 / 8) / ((0.25 + 8 / 198) - (0.1 + 2 / 198))
        assert latency_cost_efficiency(198, c[2], c[8], TC) == pytest.approx(expect)
        assert expect == pytest.approx(20.59, abs=5e-3)

    def test_same_config_skipped(self, m1):
        c = by_batch(m1)[4]
        assert latency_cost_efficiency(100, c, c, TC) is None

    def test_dominating_move(self):
        hw = HardwareType("gpu", 1.0)
        slow = ConfigProfile("A", hw, 2, 0.5)
        fast = ConfigProfile("A", hw, 4, 0.4)
        # at 100 req/s: 0.52 s → 0.44 s and cheaper
        assert math.isinf(latency_cost_efficiency(100, slow, fast, TC))

    def test_price_scaling(self):
        for _, dag in synthesize(3, 20):
            ops = [op.changes for op in lc_split_state(dag, NO_CD, TC).history] if _feasible(dag) else None
            scaled = dag.scaled_prices(3.5)
            ops2 = [op.changes for op in lc_split_state(scaled, NO_CD, TC).history] if _feasible(scaled) else None
            if ops is None:
                assert ops2 is None
                continue
            labels = [[(m, a.label, b.label) for m, a, b in ch] for ch in ops]
            labels2 = [[(m, a.label, b.label) for m, a, b in ch] for ch in ops2]
            assert labels == labels2


def _feasible(dag) -> bool:
    try:
        lc_split_state(dag, NO_CD, TC)
    except Infeasible:
        return False
    return True


class TestSplitLatency:
    def test_m3_single(self, m3_dag):
        state = lc_split_state(m3_dag, SplitterOptions(), TC)
        steps = [(op.changes[0][1].batch, op.changes[0][2].batch, op.score) for op in state.history]
        assert [(a, b) for a, b, _ in steps] == [(2, 8), (8, 32)]
        assert steps[0][2] == pytest.approx(20.59, abs=5e-3)
        assert steps[1][2] == pytest.approx(1.8437, abs=1e-3)
        assert split_latency(m3_dag, SplitterOptions(), TC) == pytest.approx({"M3": 0.8 + 32 / 198})

    def test_too_tight(self, m3):
        dag = AppDag({"M3": m3}, (), {"M3": 198.0}, 0.05)
        with pytest.raises(Infeasible):
            split_latency(dag, SplitterOptions(), TC)

    def test_chain_budgets_fit(self):
        for _, dag in synthesize(11, 40):
            try:
                budgets = split_latency(dag, SplitterOptions(), TC)
            except Infeasible:
                continue
            assert e2e_latency(dag, budgets) <= dag.slo + 1e-9

    def test_every_intermediate_state_feasible(self):
        for _, dag in synthesize(12, 30):
            try:
                state = lc_split_state(dag, SplitterOptions(), TC)
            except Infeasible:
                continue
            for k in range(len(state.history) + 1):
                partial = replay(dag, state.history[:k])
                assert e2e_latency(dag, state_latencies(dag, partial, TC)) <= dag.slo + 1e-9

    def test_history_deterministic(self):
        for _, dag in synthesize(13, 20):
            if not _feasible(dag):
                continue
            a = [op.to_json() for op in lc_split_state(dag, SplitterOptions(), TC).history]
            b = [op.to_json() for op in lc_split_state(dag, SplitterOptions(), TC).history]
            assert a == b

    def test_replay_reproduces(self):
        for _, dag in synthesize(14, 20):
            if not _feasible(dag):
                continue
            state = lc_split_state(dag, NO_CD, TC)
            assert replay(dag, state.history).current == state.current


def fork_dag() -> AppDag:
    """Mx feeds My and Mz; upgrades save 0.8, 0.4 and 0.6 for 0.04 s each (LC 20, 10, 15)."""
    hx, hy, hz = HardwareType("hx", 1.0), HardwareType("hy", 0.5), HardwareType("hz", 0.75)
    mods = {"Mx": two_step("Mx", hx, 0.04), "My": two_step("My", hy, 0.04), "Mz": two_step("Mz", hz, 0.04)}
    return AppDag(mods, (("Mx", "My"), ("Mx", "Mz")), {m: 10.0 for m in mods}, 0.445)


class TestMerge:
    def test_siblings_grouped(self):
        assert ("My", "Mz") in merge_supermodules(fork_dag())

    def test_chain_not_merged(self):
        mods = {m: profile(m, M3_ROWS) for m in "ABC"}
        dag = AppDag(mods, (("A", "B"), ("B", "C")), {m: 10.0 for m in "ABC"}, 3.0)
        assert all(len(g) == 1 for g in merge_supermodules(dag))

    def test_scenario_lcs(self):
        dag = fork_dag()
        state = default_state(dag)
        lcs = {m: latency_cost_efficiency(10, state.current[m], dag.modules[m].entries[0], TC) for m in dag.modules}
        assert lcs == pytest.approx({"Mx": 20.0, "My": 10.0, "Mz": 15.0})

    def test_merged_beats_single(self):
        dag = fork_dag()
        merged = lc_split_state(dag, NO_CD, TC)
        assert len(merged.history) == 1
        assert merged.history[0].score == pytest.approx(25.0)
        assert {m for m, _, _ in merged.history[0].changes} == {"My", "Mz"}
        single = lc_split_state(dag, SplitterOptions(enable_merge=False, cost_direct_r=0), TC)
        assert [m for op in single.history for m, _, _ in op.changes] == ["Mx"]
        assert state_cost(dag, merged) == pytest.approx(1.25)
        assert state_cost(dag, single) == pytest.approx(1.45)

    def test_merge_never_worse_on_corpus(self):
        for _, dag in synthesize(42, 60):
            if all(len(g) == 1 for g in merge_supermodules(dag)):
                continue
            try:
                on = plan_session(dag).total_cost
            except Infeasible:
                continue
            off = plan_session(dag, PlanOptions(splitter=SplitterOptions(enable_merge=False))).total_cost
            assert on <= off + 1e-9


def chain_dag() -> AppDag:
    """A→B: A's upgrade saves 0.2 for 0.01 s (LC 20), B's saves 1.0 for 0.1 s (LC 10); slack fits one."""
    ha, hb = HardwareType("ha", 0.2 / 0.95), HardwareType("hb", 2.0)
    mods = {"A": two_step("A", ha, 0.01), "B": two_step("B", hb, 0.1)}
    return AppDag(mods, (("A", "B"),), {"A": 10.0, "B": 10.0}, 0.505)


class TestCostDirect:
    def test_scenario(self):
        dag = chain_dag()
        lc = lc_split_state(dag, NO_CD, TC)
        assert [m for op in lc.history for m, _, _ in op.changes] == ["A"]
        assert lc.history[0].score == pytest.approx(20.0)
        direct = cost_direct(lc, dag, SplitterOptions(cost_direct_r=1), TC)
        assert direct.current["B"] == dag.modules["B"].entries[0]
        assert state_cost(dag, lc) - state_cost(dag, direct) == pytest.approx(0.8)

    def test_r_zero_unchanged(self):
        dag = chain_dag()
        lc = lc_split_state(dag, NO_CD, TC)
        assert cost_direct(lc, dag, NO_CD, TC) is lc

    def test_never_worse(self):
        for _, dag in synthesize(21, 40):
            if not _feasible(dag):
                continue
            lc = lc_split_state(dag, NO_CD, TC)
            for r in (1, 3, 100):
                cd = cost_direct(lc, dag, SplitterOptions(cost_direct_r=r), TC)
                assert state_cost(dag, cd) <= state_cost(dag, lc) + 1e-9
                assert e2e_latency(dag, state_latencies(dag, cd, TC)) <= dag.slo + 1e-9


def op_score(state):
    return state.history[0].score


class TestBaselines:
    def test_even_chain(self):
        mods = {m: profile(m, M3_ROWS) for m in "AB"}
        dag = AppDag(mods, (("A", "B"),), {"A": 10.0, "B": 10.0}, 1.0)
        assert even_split(dag) == pytest.approx({"A": 0.5, "B": 0.5})

    def test_even_off_path_share(self):
        mods = {m: profile(m, M3_ROWS) for m in "ABCD"}
        dag = AppDag(mods, (("A", "B"), ("B", "C"), ("A", "D")), {m: 10.0 for m in "ABCD"}, 0.9)
        assert even_split(dag) == pytest.approx({m: 0.3 for m in "ABCD"})

    def test_quantized_fine_beats_coarse(self):
        wins = total = 0
        for _, dag in synthesize(42, 40):
            try:
                fine = plan_session(dag, PlanOptions(splitter=SplitterOptions(method="quantized", step=0.01))).total_cost
                coarse = plan_session(dag, PlanOptions(splitter=SplitterOptions(method="quantized", step=0.1))).total_cost
            except Infeasible:
                continue
            total += 1
            wins += fine <= coarse + 1e-9
        assert total > 0 and wins / total >= 0.95

    def test_throughput_picks_largest_gain(self, m3_dag):
        state = lc_split_state(m3_dag, SplitterOptions(method="throughput"), TC)
        # b2 → b32 is the largest throughput gain and fits the SLO in one step
        assert [(op.changes[0][1].batch, op.changes[0][2].batch) for op in state.history] == [(2, 32)]
        assert op_score(state) == pytest.approx(40.0 - 20.0)

    def test_budgets_are_planning_wcl(self, m3_dag):
        state = lc_split_state(m3_dag, SplitterOptions(), TC)
        c = state.current["M3"]
        assert split_latency(m3_dag, SplitterOptions(), TC)["M3"] == planning_wcl(c, 198.0, TC)
