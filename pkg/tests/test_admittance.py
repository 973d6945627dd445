"""Terminal-scaled admittance assembly and network surgery."""

import numpy as np
import pytest

from pfropt.admittance import (
    TerminalMap,
    apply_fault,
    apply_line_trip,
    build_admittance,
    kron_reduce,
    reduce_to_buses,
    remove_fault,
    restore_line,
)

from conftest import random_toy_case, triangle_case, two_bus_case


def test_terminal_map_indexing():
    case = triangle_case()
    tmap = TerminalMap(case)
    assert len(tmap) == 2 * len(case.lines)
    for ln in case.lines:
        for end in (0, 1):
            k = tmap.index(ln.line_id, end)
            assert tmap.describe(k) == (ln.line_id, end)
            assert tmap.bus_of(k) == (ln.from_bus if end == 0 else ln.to_bus)
            assert tmap.other_end(k) == tmap.index(ln.line_id, 1 - end)
    # every terminal shows up at exactly one bus
    seen = sorted(k for b in case.buses for k in tmap.at_bus(b.bus_id))
    assert seen == list(range(len(tmap)))


def test_terminal_map_limits():
    case = triangle_case(pfr=True)
    tmap = TerminalMap(case)
    k = tmap.index(3, 0)
    lim = tmap.limits_of(k)
    assert lim.gamma_min == pytest.approx(0.95)
    assert lim.active
    assert not tmap.limits_of(tmap.index(1, 0)).active


def test_neutral_build_matches_hand_stamps():
    case = two_bus_case()
    ln = case.lines[0]
    y_s = 1.0 / (ln.r + 1j * ln.x)
    y_e = 0.5j * ln.b_charging
    adm = build_admittance(case)
    expect = np.array(
        [[y_s + y_e, -y_s], [-y_s, y_s + y_e]], dtype=complex
    )
    assert np.allclose(adm.Y, expect)
    assert adm.gamma == (1.0 + 0.0j, 1.0 + 0.0j)


def test_neutral_build_is_symmetric():
    rng = np.random.default_rng(7)
    for _ in range(20):
        case = random_toy_case(rng)
        Y = build_admittance(case).Y
        assert np.allclose(Y, Y.T)


def test_router_stamps_match_pi_model_power():
    # independent oracle: push currents through the pi model with terminal
    # voltages gamma * V_bus and reflect them back through conj(gamma)
    case = two_bus_case()
    ln = case.lines[0]
    y_s = 1.0 / (ln.r + 1j * ln.x)
    y_e = 0.5j * ln.b_charging
    rng = np.random.default_rng(3)
    for _ in range(25):
        g1 = (0.9 + 0.2 * rng.random()) * np.exp(1j * rng.uniform(-0.3, 0.3))
        g2 = (0.9 + 0.2 * rng.random()) * np.exp(1j * rng.uniform(-0.3, 0.3))
        adm = build_admittance(case, {(1, 0): g1, (1, 1): g2})
        v = rng.uniform(0.9, 1.1, 2) * np.exp(1j * rng.uniform(-0.5, 0.5, 2))
        i_bus = adm.Y @ v
        vt1, vt2 = g1 * v[0], g2 * v[1]
        it1 = (y_s + y_e) * vt1 - y_s * vt2
        it2 = (y_s + y_e) * vt2 - y_s * vt1
        assert i_bus[0] == pytest.approx(np.conj(g1) * it1)
        assert i_bus[1] == pytest.approx(np.conj(g2) * it2)


def test_asymmetric_when_phase_shifts_differ():
    # pure magnitude ratios keep Y symmetric; a phase split breaks it
    case = triangle_case()
    g_f = 1.02 * np.exp(0.08j)
    g_t = 0.98 * np.exp(-0.05j)
    adm = build_admittance(case, {(3, 0): g_f, (3, 1): g_t})
    assert not np.allclose(adm.Y, adm.Y.T)
    assert adm.gamma_at(3, 0) == pytest.approx(g_f)
    assert adm.gamma_at(3, 1) == pytest.approx(g_t)
    mags = build_admittance(case, {(3, 0): 1.04, (3, 1): 0.97})
    assert np.allclose(mags.Y, mags.Y.T)


def test_fault_marks_bus_without_touching_matrix():
    adm = build_admittance(triangle_case())
    faulted = apply_fault(adm, 3)
    assert faulted.grounded == frozenset({3})
    assert np.array_equal(faulted.Y, adm.Y)
    assert remove_fault(faulted, 3) == adm
    with pytest.raises(KeyError):
        apply_fault(adm, 42)


def test_trip_matches_rebuild_without_line():
    case = triangle_case()
    tripped = apply_line_trip(build_admittance(case), 2)
    fresh = build_admittance(case.without_line(2))
    assert np.allclose(tripped.Y, fresh.Y)
    assert tripped.tripped == frozenset({2})


def test_trip_restore_round_trip():
    adm = build_admittance(triangle_case(), {(3, 0): 1.02, (3, 1): 0.98})
    back = restore_line(apply_line_trip(adm, 3), 3)
    assert np.allclose(back.Y, adm.Y)
    assert back.tripped == frozenset()
    with pytest.raises(ValueError):
        restore_line(adm, 3)


def test_trip_refuses_to_island():
    adm = build_admittance(two_bus_case())
    with pytest.raises(ValueError):
        apply_line_trip(adm, 1)
    tri = apply_line_trip(build_admittance(triangle_case()), 1)
    with pytest.raises(ValueError):
        apply_line_trip(tri, 2)
    with pytest.raises(ValueError):
        apply_line_trip(tri, 1)  # already out


def test_kron_reduce_schur_formula():
    rng = np.random.default_rng(11)
    A = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    A = A + A.T + 6j * np.eye(5)  # keep the interior block invertible
    keep = np.array([0, 3])
    elim = np.array([1, 2, 4])
    red = kron_reduce(A, keep)
    expect = A[np.ix_(keep, keep)] - A[np.ix_(keep, elim)] @ np.linalg.solve(
        A[np.ix_(elim, elim)], A[np.ix_(elim, keep)]
    )
    assert np.allclose(red, expect)


def test_kron_reduce_keep_all_copies():
    Y = build_admittance(triangle_case()).Y
    red = kron_reduce(Y, np.arange(3))
    assert np.allclose(red, Y)
    red[0, 0] = 0.0
    assert Y[0, 0] != 0.0


def test_kron_reduce_preserves_port_response():
    # with zero injection at eliminated nodes, the reduced matrix must
    # reproduce the currents seen at the kept ones
    rng = np.random.default_rng(5)
    for _ in range(10):
        case = random_toy_case(rng)
        if case.n_bus < 3:
            continue
        Y = build_admittance(case).Y
        keep = np.array([0, case.n_bus - 1])
        mask = np.ones(case.n_bus, dtype=bool)
        mask[keep] = False
        elim = np.nonzero(mask)[0]
        v_k = rng.uniform(0.9, 1.1, keep.size) * np.exp(
            1j * rng.uniform(-0.4, 0.4, keep.size)
        )
        v_e = np.linalg.solve(
            Y[np.ix_(elim, elim)] + 1e-9j * np.eye(elim.size),
            -Y[np.ix_(elim, keep)] @ v_k,
        )
        i_k = Y[np.ix_(keep, keep)] @ v_k + Y[np.ix_(keep, elim)] @ v_e
        red = kron_reduce(
            Y + 1e-9j * np.eye(case.n_bus), np.asarray(keep)
        )
        assert np.allclose(red @ v_k, i_k, atol=1e-6)


def test_reduce_to_buses_drops_grounded():
    case = triangle_case()
    adm = apply_fault(build_admittance(case), 3)
    red = reduce_to_buses(adm, [1, 2])
    # bus 3 deleted outright: the 1-2 block survives unchanged
    assert np.allclose(red, adm.Y[:2, :2])
    with pytest.raises(ValueError):
        reduce_to_buses(adm, [3])


def test_reduce_to_buses_matches_manual_order():
    adm = build_admittance(triangle_case())
    red = reduce_to_buses(adm, [2, 1])
    swapped = reduce_to_buses(adm, [1, 2])
    assert np.allclose(red, swapped[np.ix_([1, 0], [1, 0])])
