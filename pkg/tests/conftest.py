from __future__ import annotations

from pathlib import Path

import pytest

from dnnplan import AppDag, ConfigProfile, DispatchPolicy, HardwareType, ModuleProfile, Tier, make_schedule

WORKLOADS = Path(__file__).resolve().parents[1] / "workloads"

GPU = HardwareType("gpu", 1.0)


def profile(mid: str, rows, hw: HardwareType = GPU) -> ModuleProfile:
    return ModuleProfile(mid, tuple(ConfigProfile(mid, hw, b, d) for b, d in rows))


# profiled (batch, duration) pairs from the worked examples
M1_ROWS = ((2, 0.16), (4, 0.2), (8, 0.32))
M2_ROWS = ((2, 0.1), (8, 0.25), (32, 0.8))
M3_ROWS = ((2, 0.1), (8, 0.25), (32, 0.8))


@pytest.fixture
def m1() -> ModuleProfile:
    return profile("M1", M1_ROWS)


@pytest.fixture
def m3() -> ModuleProfile:
    return profile("M3", M3_ROWS)


@pytest.fixture
def m3_dag(m3) -> AppDag:
    return AppDag({"M3": m3}, (), {"M3": 198.0}, 1.0)


@pytest.fixture
def m4_schedule():
    """Two b=6 machines (d=2) and one b=2 machine (d=1) sharing 8 req/s."""
    a = ConfigProfile("M4", GPU, 6, 2.0)
    c = ConfigProfile("M4", GPU, 2, 1.0)
    return make_schedule("M4", (Tier.of(a, 2), Tier.of(c, 1)), 0.0, DispatchPolicy.TC)


def by_batch(prof: ModuleProfile) -> dict[int, ConfigProfile]:
    return {c.batch: c for c in prof.entries}
