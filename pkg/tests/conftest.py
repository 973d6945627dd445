"""Shared builders for the test suite.

Toy grids are constructed in code so each test controls exactly the
feature it exercises; the bundled 9-bus and 2-bus cases come in through
session fixtures since parsing them repeatedly buys nothing.
"""

from __future__ import annotations

import numpy as np
import pytest

from pfropt.caseio import bundled_path, load_bundled
from pfropt.dynamics import FaultEvent
from pfropt.network import Bus, Generator, Line, NetworkCase, PfrLimits, WindFarm
from pfropt.pipeline import (
    OfflineOptions,
    PipelineConfig,
    RobustnessOptions,
)
from pfropt.sdp import load_dispatch


def two_bus_case(p_load: float = 80.0, q_load: float = 25.0) -> NetworkCase:
    """One machine feeding one load over a single line."""
    return NetworkCase(
        name="twobus",
        base_mva=100.0,
        buses=(
            Bus(1, 0.95, 1.05, 0.0, 0.0),
            Bus(2, 0.95, 1.05, p_load, q_load),
        ),
        lines=(Line(1, 1, 2, 0.01, 0.10, 0.02),),
        generators=(
            Generator(1, 0.0, 300.0, -200.0, 200.0, 0.02, 10.0, 0.0,
                      inertia=5.0, xd_t=0.25),
        ),
        reference_bus=1,
    )


def triangle_case(pfr: bool = True, wind: bool = True) -> NetworkCase:
    """Two machines and a wind-supported load around a three-bus loop.

    The router on line 3 sits between the load corner and the second
    machine; its range mirrors the bundled 9-bus settings.
    """
    limits = PfrLimits(0.95, 1.05, -np.pi / 18, np.pi / 18) if pfr else PfrLimits()
    farms = (WindFarm(3, 30.0, 0.25, 0.08),) if wind else ()
    return NetworkCase(
        name="triangle",
        base_mva=100.0,
        buses=(
            Bus(1, 0.95, 1.05, 0.0, 0.0),
            Bus(2, 0.95, 1.05, 0.0, 0.0),
            Bus(3, 0.95, 1.05, 120.0, 40.0),
        ),
        lines=(
            Line(1, 1, 2, 0.01, 0.08, 0.02),
            Line(2, 1, 3, 0.02, 0.12, 0.03),
            Line(3, 2, 3, 0.02, 0.10, 0.02, pfr=limits),
        ),
        generators=(
            Generator(1, 0.0, 200.0, -150.0, 150.0, 0.04, 12.0, 0.0,
                      inertia=6.0, xd_t=0.2),
            Generator(2, 0.0, 150.0, -150.0, 150.0, 0.02, 8.0, 0.0,
                      inertia=4.0, xd_t=0.25),
        ),
        wind_farms=farms,
        reference_bus=1,
    )


def random_toy_case(rng: np.random.Generator) -> NetworkCase:
    """Random connected case with 2..5 buses for relaxation sweeps.

    Loads stay well inside the generation capability so the nonconvex
    feasible set is comfortably nonempty.
    """
    n = int(rng.integers(2, 6))
    bus_ids = list(range(1, n + 1))

    lines = []
    lid = 1
    for b in bus_ids[1:]:  # random spanning tree
        other = int(rng.integers(1, b))
        r = float(rng.uniform(0.005, 0.03))
        x = float(rng.uniform(0.05, 0.2))
        lines.append(Line(lid, other, b, r, x, float(rng.uniform(0.0, 0.05))))
        lid += 1
    extra = int(rng.integers(0, n - 1)) if n > 2 else 0
    for _ in range(extra):
        a, b = rng.choice(bus_ids, size=2, replace=False)
        if any(
            {ln.from_bus, ln.to_bus} == {int(a), int(b)} for ln in lines
        ):
            continue
        lines.append(
            Line(lid, int(a), int(b), float(rng.uniform(0.005, 0.03)),
                 float(rng.uniform(0.05, 0.2)))
        )
        lid += 1

    n_gen = 1 if n == 2 else int(rng.integers(1, 3))
    gen_buses = list(rng.choice(bus_ids, size=n_gen, replace=False))
    gens = tuple(
        Generator(
            int(b), 0.0, float(rng.uniform(150.0, 300.0)),
            -200.0, 200.0,
            float(rng.uniform(0.01, 0.05)), float(rng.uniform(5.0, 15.0)), 0.0,
            inertia=float(rng.uniform(3.0, 8.0)), xd_t=0.25,
        )
        for b in gen_buses
    )

    buses = []
    for b in bus_ids:
        if b in gen_buses:
            buses.append(Bus(b, 0.95, 1.05, 0.0, 0.0))
        else:
            buses.append(
                Bus(b, 0.95, 1.05, float(rng.uniform(10.0, 60.0)),
                    float(rng.uniform(0.0, 20.0)))
            )

    farms = ()
    non_gen = [b for b in bus_ids if b not in gen_buses]
    if non_gen and rng.random() < 0.5:
        farms = (WindFarm(int(rng.choice(non_gen)), float(rng.uniform(5.0, 25.0)),
                          0.25, 0.08),)

    if rng.random() < 0.5 and lines:
        k = int(rng.integers(0, len(lines)))
        ln = lines[k]
        lines[k] = Line(
            ln.line_id, ln.from_bus, ln.to_bus, ln.r, ln.x, ln.b_charging,
            pfr=PfrLimits(0.95, 1.05, -np.pi / 18, np.pi / 18),
        )

    return NetworkCase(
        name=f"toy{n}",
        base_mva=100.0,
        buses=tuple(buses),
        lines=tuple(lines),
        generators=gens,
        wind_farms=farms,
        reference_bus=int(gen_buses[0]),
    )


def quick_config(**over) -> PipelineConfig:
    """Small-count pipeline settings for fast in-test builds."""
    base = dict(
        seed=2024,
        workers=1,
        offline=OfflineOptions(epsilon=0.3, delta=0.05, samples=30, reduced=6),
        robustness=RobustnessOptions(count=8),
        contingencies=(FaultEvent(fault_bus=9, t0=0.0, t_cl=0.21, trip_line=6),),
    )
    base.update(over)
    return PipelineConfig(**base)


DESK_FAULT = FaultEvent(fault_bus=9, t0=0.0, t_cl=0.21, trip_line=6)


@pytest.fixture(scope="session")
def wscc9():
    return load_bundled("wscc9")


@pytest.fixture(scope="session")
def smib2():
    return load_bundled("smib2")


@pytest.fixture(scope="session")
def smib2_dispatch():
    return load_dispatch(bundled_path("smib2_dispatch.json"))
