"""Seeded generator of small benchmark workloads.

Durations grow sub-linearly in batch size (``d = base + per·b`` with a fixed
overhead), so larger batches always have higher throughput. A second
hardware type, when present, is faster and proportionally dearer. SLOs are a
random multiple of the tightest critical path, which leaves a minority of
instances infeasible on purpose.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .dispatch import DispatchPolicy, planning_wcl
from .model import AppDag, ConfigProfile, HardwareType, ModuleProfile, e2e_latency

BATCHES = (1, 2, 4, 8, 16, 32)
SHAPES = ("chain", "fork", "diamond")


@dataclass(frozen=True)
class SynthOptions:
    min_modules: int = 1
    max_modules: int = 4
    min_configs: int = 2
    max_configs: int = 5
    max_hardware: int = 2
    slo_low: float = 0.85  # SLO factor range over the tightest critical path
    slo_high: float = 3.0


ORACLE_SIZED = SynthOptions(max_modules=3, max_configs=4)
SINGLE_MODULE = SynthOptions(max_modules=1)


def _edges(shape: str, ids: list[str]) -> list[tuple[str, str]]:
    n = len(ids)
    if shape == "chain" or n < 3:
        return [(ids[i], ids[i + 1]) for i in range(n - 1)]
    if shape == "fork" or n == 3:
        return [(ids[0], ids[1]), (ids[0], ids[2])]
    return [(ids[0], ids[1]), (ids[0], ids[2]), (ids[1], ids[3]), (ids[2], ids[3])]


def _profile(rng: random.Random, mid: str, hardware: list[tuple[HardwareType, float]], n_configs: int) -> ModuleProfile:
    base = rng.uniform(0.02, 0.2)
    per = base * rng.uniform(0.05, 0.5)
    pairs = [(h, b) for h in range(len(hardware)) for b in BATCHES]
    chosen = rng.sample(pairs, min(n_configs, len(pairs)))
    entries = []
    for h, b in sorted(chosen):
        hw, speed = hardware[h]
        entries.append(ConfigProfile(mid, hw, b, round((base + per * b) / speed, 4)))
    return ModuleProfile(mid, tuple(entries))


def synthesize_one(rng: random.Random, options: SynthOptions = SynthOptions()) -> AppDag:
    n_hw = rng.randint(1, options.max_hardware)
    hardware = [(HardwareType("h0", 1.0), 1.0)]
    if n_hw == 2:
        speed = round(rng.uniform(1.3, 3.5), 2)
        premium = rng.uniform(0.8, 1.3)
        hardware.append((HardwareType("h1", round(speed * premium, 2)), speed))
    n = rng.randint(options.min_modules, options.max_modules)
    shape = rng.choice(SHAPES) if n >= 3 else "chain"
    ids = [f"m{i}" for i in range(n)]
    modules = {m: _profile(rng, m, hardware, rng.randint(options.min_configs, options.max_configs)) for m in ids}
    base_rate = rng.randint(20, 400)
    rates = {m: float(max(1, round(base_rate * rng.choice((1.0, 1.0, 0.5, 2.0))))) for m in ids}
    edges = _edges(shape, ids)
    dag = AppDag(modules, tuple(edges), rates, 1.0)
    tight = {m: min(planning_wcl(c, rates[m], DispatchPolicy.TC) for c in modules[m].entries) for m in ids}
    slo = round(e2e_latency(dag, tight) * rng.uniform(options.slo_low, options.slo_high), 3)
    return AppDag(modules, tuple(edges), rates, max(slo, 0.001))


def synthesize(seed: int, count: int, options: SynthOptions = SynthOptions()) -> list[tuple[str, AppDag]]:
    """``count`` workloads named ``w{seed}-{i:04d}``; instance ``i`` depends only on (seed, i)."""
    out = []
    for i in range(count):
        rng = random.Random(f"{seed}:{i}")
        out.append((f"w{seed}-{i:04d}", synthesize_one(rng, options)))
    return out
