from __future__ import annotations

import random

import pytest

from conftest import GPU, by_batch
from dnnplan import (
    ConfigProfile,
    DispatchPolicy,
    PlanningError,
    SchedulerOptions,
    Tier,
    generate_config,
    module_wcl,
    planning_wcl,
    remaining_workloads,
    tier_wcl,
)
from dnnplan.dispatch import TierView

TC, RR, DT = DispatchPolicy.TC, DispatchPolicy.RR, DispatchPolicy.DT


def view(b, d, w, machine_rate=None):
    c = ConfigProfile("X", GPU, b, d)
    return TierView(c, w, machine_rate if machine_rate is not None else c.throughput, 1, 0)


class TestRemainingWorkloads:
    def test_m4(self, m4_schedule):
        views = remaining_workloads(m4_schedule)
        assert [(v.machines, v.remaining_workload) for v in views] == [(2, pytest.approx(8.0)), (1, pytest.approx(2.0))]

    def test_partial_is_own_group(self, m3):
        b8 = by_batch(m3)[8]
        views = remaining_workloads([Tier.for_rate(b8, 38.0)])
        assert [v.remaining_workload for v in views] == pytest.approx([38.0, 6.0])
        assert [v.partial for v in views] == [False, True]

    def test_single_tier(self, m3):
        views = remaining_workloads([Tier.of(by_batch(m3)[32], 5)])
        assert [v.remaining_workload for v in views] == pytest.approx([200.0])

    def test_rejects_unordered(self, m3):
        c = by_batch(m3)
        with pytest.raises(PlanningError):
            remaining_workloads([Tier.of(c[8], 1), Tier.of(c[32], 1)])

    def test_first_w_is_total(self, m3):
        s = generate_config(198, 1.0, m3, SchedulerOptions(enable_dummy=False))
        assert remaining_workloads(s)[0].remaining_workload == pytest.approx(s.total_rate)


class TestTierWcl:
    def test_m4_top_tier(self):
        assert tier_wcl(view(6, 2.0, 8.0), TC) == pytest.approx(2.75)

    def test_m3_top_tier(self):
        assert tier_wcl(view(32, 0.8, 198.0), TC) == pytest.approx(0.9616, abs=1e-4)

    def test_rr_full_machine(self):
        assert tier_wcl(view(8, 0.25, 198.0), RR) == pytest.approx(0.5)

    def test_tc_equals_2d(self):
        assert tier_wcl(view(2, 0.1, 20.0), TC) == pytest.approx(0.2)

    def test_dt_full_machine(self):
        assert tier_wcl(view(8, 0.25, 100.0), DT) == pytest.approx(0.5)

    def test_rejects_zero_w(self):
        with pytest.raises(PlanningError):
            tier_wcl(view(2, 0.1, 0.0), TC)


class TestModuleWcl:
    def test_m4(self, m4_schedule):
        assert module_wcl(m4_schedule, TC) == pytest.approx(2.75)
        assert [tier_wcl(v, TC) for v in remaining_workloads(m4_schedule)] == pytest.approx([2.75, 2.0])

    def test_s3(self, m3):
        c = by_batch(m3)
        tiers = [Tier.of(c[32], 4), Tier.of(c[8], 1), Tier.for_rate(c[2], 6.0)]
        per = [tier_wcl(v, TC) for v in remaining_workloads(tiers)]
        assert per == pytest.approx([0.8 + 32 / 198, 0.25 + 8 / 38, 0.1 + 2 / 6])
        assert module_wcl(tiers, TC) == pytest.approx(0.9616, abs=1e-4)

    def test_rr_full(self, m3):
        assert module_wcl([Tier.of(by_batch(m3)[8], 3)], RR) == pytest.approx(0.5)

    def test_tc_monotone_in_w(self):
        rng = random.Random(1)
        for _ in range(200):
            b, d = rng.choice((1, 2, 4, 8)), rng.uniform(0.01, 1)
            w1 = rng.uniform(0.1, 100)
            w2 = w1 + rng.uniform(0, 100)
            assert tier_wcl(view(b, d, w2), TC) <= tier_wcl(view(b, d, w1), TC)


class TestPlanningWcl:
    def test_m1_lists(self, m1):
        c = by_batch(m1)
        assert [planning_wcl(c[b], 100, TC) for b in (2, 4, 8)] == pytest.approx([0.18, 0.24, 0.4], abs=1e-9)
        assert [planning_wcl(c[b], 100, RR) for b in (2, 4, 8)] == pytest.approx([0.32, 0.4, 0.64], abs=1e-9)

    def test_dt_equals_rr(self, m1):
        for c in m1.entries:
            assert planning_wcl(c, 100, DT) == planning_wcl(c, 100, RR)

    def test_b1_formula(self):
        assert planning_wcl(ConfigProfile("X", GPU, 1, 0.1), 1000, TC) == pytest.approx(0.101)

    def test_rejects_zero_rate(self, m1):
        with pytest.raises(PlanningError):
            planning_wcl(m1.entries[0], 0.0, TC)

    def test_tc_below_rr_when_rate_exceeds_throughput(self):
        rng = random.Random(2)
        for _ in range(500):
            c = ConfigProfile("X", GPU, rng.choice((1, 2, 4, 8, 16, 32)), rng.uniform(0.005, 2.0))
            rate = c.throughput * rng.uniform(1.0, 20.0)
            assert planning_wcl(c, rate, TC) <= planning_wcl(c, rate, RR) + 1e-12

    def test_matches_post_hoc_w(self, m3):
        # the allocator's unallocated workload at each step is the tier's w afterwards
        s = generate_config(198, 1.0, m3, SchedulerOptions(enable_dummy=False))
        for v in remaining_workloads(s):
            if not v.partial:
                assert planning_wcl(v.config, v.remaining_workload, TC) == pytest.approx(tier_wcl(v, TC))
