"""Newton power flow against synthetic solutions it must reproduce."""

import numpy as np
import pytest

from pfropt.admittance import build_admittance
from pfropt.network import Bus, Generator, Line, NetworkCase
from pfropt.powerflow import (
    PowerFlowError,
    net_injections,
    solve_power_flow,
)

from conftest import random_toy_case, triangle_case, two_bus_case


def lossless_pair():
    return NetworkCase(
        name="pair",
        base_mva=100.0,
        buses=(Bus(1, 0.9, 1.1, 0.0, 0.0), Bus(2, 0.9, 1.1, 0.0, 0.0)),
        lines=(Line(1, 1, 2, 0.0, 0.1, 0.0),),
        generators=(
            Generator(1, 0.0, 300.0, -200.0, 200.0, 0.02, 10.0, 0.0,
                      inertia=5.0, xd_t=0.25),
        ),
        reference_bus=1,
    )


def test_flat_network_converges_immediately():
    case = lossless_pair()
    adm = build_admittance(case)
    res = solve_power_flow(
        adm, np.zeros(2), np.zeros(2), {1: 1.0}, slack_bus=1
    )
    assert res.converged
    assert res.iterations == 0
    assert np.allclose(res.v, 1.0)
    assert np.allclose(res.s_injection, 0.0, atol=1e-12)


def test_textbook_two_bus_transfer():
    # P2 = V1 V2 sin(d) / X over a pure reactance: invert by hand
    case = lossless_pair()
    adm = build_admittance(case)
    p2 = -0.5  # draw 50 MW at bus 2
    res = solve_power_flow(
        adm, np.array([0.0, p2]), np.zeros(2), {1: 1.0, 2: 1.0}, slack_bus=1
    )
    assert res.converged
    delta = np.angle(res.v[1])
    assert np.sin(-delta) * 1.0 * 1.0 / 0.1 == pytest.approx(0.5, rel=1e-9)
    # the slack picks up exactly what bus 2 draws: lossless line
    assert res.s_injection[0].real == pytest.approx(0.5, rel=1e-9)


def test_recovers_constructed_solution():
    # forward-engineer injections from a known voltage profile, then make
    # the solver find that profile again from a flat start
    rng = np.random.default_rng(17)
    hits = 0
    for _ in range(20):
        case = random_toy_case(rng)
        n = case.n_bus
        gamma = {}
        for ln in case.lines:
            if ln.pfr.active:
                gamma[(ln.line_id, 0)] = rng.uniform(0.97, 1.03) * np.exp(
                    1j * rng.uniform(-0.05, 0.05)
                )
        adm = build_admittance(case, gamma or None)
        v_true = rng.uniform(0.97, 1.03, n) * np.exp(
            1j * rng.uniform(-0.15, 0.15, n)
        )
        sl = case.bus_position(case.slack_bus)
        v_true[sl] = abs(v_true[sl])  # slack pins angle zero
        s_true = v_true * np.conj(adm.Y @ v_true)
        res = solve_power_flow(
            adm,
            np.real(s_true),
            np.imag(s_true),
            {case.slack_bus: float(abs(v_true[sl]))},
            slack_bus=case.slack_bus,
        )
        assert res.converged
        assert np.allclose(res.v, v_true, atol=1e-8)
        hits += 1
    assert hits == 20


def test_pv_bus_holds_magnitude_and_frees_q():
    case = triangle_case()
    adm = build_admittance(case)
    p, q = net_injections(case, np.array([0.8, 0.5]))
    res = solve_power_flow(
        adm, p, q, {1: 1.02, 2: 1.01}, slack_bus=1
    )
    assert res.converged
    assert abs(res.v[0]) == pytest.approx(1.02)
    assert abs(res.v[1]) == pytest.approx(1.01)
    # P held at both non-slack buses, Q only at the PQ bus
    assert res.s_injection[1].real == pytest.approx(p[1], abs=1e-9)
    assert res.s_injection[2].real == pytest.approx(p[2], abs=1e-9)
    assert res.s_injection[2].imag == pytest.approx(q[2], abs=1e-9)


def test_router_ratio_changes_operating_point():
    case = triangle_case()
    p, q = net_injections(case, np.array([0.8, 0.5]))
    sets = {1: 1.0, 2: 1.0}
    base = solve_power_flow(build_admittance(case), p, q, sets, slack_bus=1)
    boosted = solve_power_flow(
        build_admittance(case, {(3, 0): 1.05}), p, q, sets, slack_bus=1
    )
    lowered = solve_power_flow(
        build_admittance(case, {(3, 1): 1.05}), p, q, sets, slack_bus=1
    )
    assert base.converged and boosted.converged and lowered.converged
    # stepping the sending terminal up feeds the load end; stepping the
    # receiving terminal up divides its own bus voltage down
    assert abs(boosted.v[2]) > abs(base.v[2])
    assert abs(lowered.v[2]) < abs(base.v[2])


def test_net_injections_bookkeeping():
    case = triangle_case()
    p, q = net_injections(case, np.array([0.9, 0.6]))
    assert p[0] == pytest.approx(0.9)
    assert p[1] == pytest.approx(0.6)
    assert p[2] == pytest.approx((30.0 - 120.0) / 100.0)
    assert q[2] == pytest.approx(-0.40)
    p2, _ = net_injections(case, np.array([0.9, 0.6]), wind_pu=np.array([0.1]))
    assert p2[2] == pytest.approx((10.0 - 120.0) / 100.0)
    bare, _ = net_injections(
        triangle_case(wind=False), np.array([0.9, 0.6])
    )
    assert bare[2] == pytest.approx(-1.2)


def test_missing_slack_setpoint_raises():
    adm = build_admittance(two_bus_case())
    with pytest.raises(PowerFlowError):
        solve_power_flow(adm, np.zeros(2), np.zeros(2), {2: 1.0}, slack_bus=1)


def test_infeasible_load_reports_divergence():
    case = two_bus_case(p_load=80.0)
    adm = build_admittance(case)
    p, q = net_injections(case, np.array([0.0]))
    p[1] = -60.0  # 6 GW through one feeder: no solution exists
    res = solve_power_flow(adm, p, q, {1: 1.0}, slack_bus=1, max_iter=25)
    assert not res.converged
    assert res.mismatch > 1e-6
