"""Scenario sampling, fast-forward reduction, selection, serialization."""

import itertools
import math

import numpy as np
import pytest

from pfropt.scenarios import (
    EmptySelectionError,
    PredictionInterval,
    ScenarioSet,
    dumps_scenarios,
    fast_forward_indices,
    fast_forward_reduce,
    interval_from_case,
    kantorovich_distance,
    load_scenarios,
    loads_scenarios,
    redistribute_to,
    sample_complexity,
    sample_uniform,
    save_scenarios,
    select_online,
)

from conftest import triangle_case


def flat_set(outputs, probs=None, **kw):
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float).T).T
    if outputs.shape[1] > outputs.shape[0] and outputs.shape[0] == 1:
        outputs = outputs.T
    if probs is None:
        probs = np.full(outputs.shape[0], 1.0 / outputs.shape[0])
    return ScenarioSet(outputs, np.asarray(probs, dtype=float), "sampled", **kw)


# ---- intervals -----------------------------------------------------------

def test_interval_validation():
    with pytest.raises(ValueError):
        PredictionInterval("day_ahead", (1.0, 2.0), (1.0,))
    with pytest.raises(ValueError):
        PredictionInterval("day_ahead", (5.0,), (4.0,))


def test_interval_geometry():
    box = PredictionInterval("day_ahead", (10.0, 20.0), (30.0, 40.0))
    assert np.allclose(box.midpoint, [20.0, 30.0])
    assert box.n_farms == 2
    assert box.contains_point([10.0, 40.0])
    assert not box.contains_point([9.0, 30.0])
    inner = PredictionInterval("short_term", (15.0, 25.0), (25.0, 35.0))
    assert box.contains(inner)
    assert not inner.contains(box)


def test_interval_from_case_widths():
    case = triangle_case()
    day = interval_from_case(case, "day_ahead")
    short = interval_from_case(case, "short_term")
    # one farm: 30 MW forecast, half-widths 25% and 8%
    assert day.lower == pytest.approx((22.5,))
    assert day.upper == pytest.approx((37.5,))
    assert short.lower == pytest.approx((27.6,))
    assert short.upper == pytest.approx((32.4,))
    assert day.contains(short)
    with pytest.raises(ValueError):
        interval_from_case(case, "next_week")


# ---- sample complexity ---------------------------------------------------

def test_sample_complexity_pinned_values():
    assert sample_complexity(0.1, 0.05, 2) == 64
    assert sample_complexity(0.2, 0.1, 3) == 35
    assert sample_complexity(0.05, 0.01, 5) == 273


def test_sample_complexity_is_tight_ceiling():
    rng = np.random.default_rng(2)
    for _ in range(50):
        eps = float(rng.uniform(0.01, 0.5))
        delta = float(rng.uniform(0.001, 0.2))
        n = int(rng.integers(1, 12))
        got = sample_complexity(eps, delta, n)
        bound = math.e / (eps * (math.e - 1.0)) * (-math.log(delta) + n - 1)
        assert got - 1 < bound <= got


def test_sample_complexity_monotonicity():
    assert sample_complexity(0.05, 0.01, 4) > sample_complexity(0.1, 0.01, 4)
    assert sample_complexity(0.1, 0.001, 4) > sample_complexity(0.1, 0.01, 4)
    assert sample_complexity(0.1, 0.01, 9) > sample_complexity(0.1, 0.01, 4)


def test_sample_complexity_rejects_bad_inputs():
    for eps, delta, n in [(0.0, 0.1, 3), (1.0, 0.1, 3), (0.1, 0.0, 3),
                          (0.1, 1.5, 3), (0.1, 0.1, 0)]:
        with pytest.raises(ValueError):
            sample_complexity(eps, delta, n)


# ---- sampling ------------------------------------------------------------

def test_sample_uniform_determinism_and_bounds():
    box = PredictionInterval("day_ahead", (22.5, 10.0), (37.5, 50.0))
    a = sample_uniform(box, 500, seed=42)
    b = sample_uniform(box, 500, seed=42)
    c = sample_uniform(box, 500, seed=43)
    assert np.array_equal(a.outputs, b.outputs)
    assert not np.array_equal(a.outputs, c.outputs)
    assert np.all(a.outputs >= [22.5, 10.0]) and np.all(a.outputs <= [37.5, 50.0])
    assert np.allclose(a.probabilities, 1.0 / 500)
    assert a.seed == 42 and a.provenance == "sampled"
    assert a.interval is box
    with pytest.raises(ValueError):
        sample_uniform(box, 0, seed=1)


def test_scenario_set_is_read_only():
    s = sample_uniform(PredictionInterval("day_ahead", (0.0,), (1.0,)), 5, 3)
    with pytest.raises(ValueError):
        s.outputs[0, 0] = 99.0
    with pytest.raises(ValueError):
        s.probabilities[0] = 0.5


def test_scenario_set_validation_and_subset():
    with pytest.raises(ValueError):
        ScenarioSet(np.zeros((3, 1)), np.array([0.5, 0.5]), "sampled")
    with pytest.raises(ValueError):
        ScenarioSet(np.zeros((2, 1)), np.array([1.1, -0.1]), "sampled")
    s = flat_set([0.0, 1.0, 2.0], [0.2, 0.3, 0.5], seed=9)
    sub = s.subset([0, 2], "selected")
    assert sub.probabilities == pytest.approx([0.2 / 0.7, 0.5 / 0.7])
    assert sub.seed == 9 and sub.provenance == "selected"
    raw = s.subset([1], "selected", renormalize=False)
    assert raw.probabilities == pytest.approx([0.3])
    assert s.scenario(1).outputs == (1.0,)
    with pytest.raises(ValueError):
        ScenarioSet(np.zeros((2, 1)), np.zeros(2), "x").subset([0], "y")


# ---- transport distance --------------------------------------------------

def test_kantorovich_hand_value():
    a = flat_set([0.0, 1.0], [0.5, 0.5])
    b = flat_set([0.0], [1.0])
    assert kantorovich_distance(a, b) == pytest.approx(0.5)
    assert kantorovich_distance(a, a) == 0.0
    taxi = kantorovich_distance(a, b, cost=lambda x, y: np.abs(x - y).sum())
    assert taxi == pytest.approx(0.5)
    with pytest.raises(ValueError):
        kantorovich_distance(a, ScenarioSet(np.empty((0, 1)), np.empty(0), "x"))


def test_kantorovich_scales_with_mass():
    a = flat_set([0.0, 4.0], [0.25, 0.75])
    b = flat_set([0.0], [1.0])
    assert kantorovich_distance(a, b) == pytest.approx(3.0)


# ---- fast-forward selection ----------------------------------------------

def test_fast_forward_hand_instance():
    s = flat_set([0.0, 1.0, 10.0], [0.45, 0.45, 0.10])
    assert fast_forward_indices(s, 1).tolist() == [1]
    assert fast_forward_indices(s, 2).tolist() == [1, 2]
    assert fast_forward_indices(s, 3).tolist() == [0, 1, 2]
    with pytest.raises(ValueError):
        fast_forward_indices(s, 0)
    with pytest.raises(ValueError):
        fast_forward_indices(s, 4)


def test_fast_forward_tie_goes_to_lowest_index():
    s = flat_set([3.0, 3.0, 3.0], [1 / 3, 1 / 3, 1 / 3])
    assert fast_forward_indices(s, 1).tolist() == [0]
    assert fast_forward_indices(s, 2).tolist() == [0, 1]


def _brute_force_best(s, keep):
    combos = list(itertools.combinations(range(len(s)), keep))
    dists = [
        kantorovich_distance(s, s.subset(list(c), "b", renormalize=False))
        for c in combos
    ]
    k = int(np.argmin(dists))
    return combos[k], dists[k], dists


# seeds screened so the exhaustive optimum is unique and the greedy pick
# lands on it; forward selection is a heuristic and misses the optimum on
# some geometries, so the equality check runs on this verified batch
GREEDY_EXACT_SEEDS = (0, 1, 4, 5, 6, 7, 8, 9, 10, 12, 14, 17)


def _uniform_instance(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 60.0, size=(8, 2))
    return ScenarioSet(pts, rng.dirichlet(np.ones(8)), "sampled")


def test_greedy_matches_brute_force_on_verified_batch():
    for seed in GREEDY_EXACT_SEEDS:
        s = _uniform_instance(seed)
        best, best_d, _ = _brute_force_best(s, 3)
        assert fast_forward_indices(s, 3).tolist() == sorted(best)


def test_greedy_never_beats_brute_force():
    for seed in range(30):
        s = _uniform_instance(seed)
        _, best_d, _ = _brute_force_best(s, 3)
        got = kantorovich_distance(
            s, s.subset(fast_forward_indices(s, 3), "g", renormalize=False)
        )
        assert got >= best_d - 1e-12


def test_greedy_exact_on_separated_duplicate_clusters():
    # three locations, duplicate atoms: any cover is optimal with zero cost,
    # and greedy must find a cover
    rng = np.random.default_rng(8)
    for _ in range(20):
        centers = rng.uniform(0.0, 100.0, size=(3, 2))
        reps = rng.integers(2, 4, size=3)
        pts = np.repeat(centers, reps, axis=0)
        probs = rng.dirichlet(np.ones(pts.shape[0]))
        s = ScenarioSet(pts, probs, "sampled")
        idx = fast_forward_indices(s, 3)
        red = s.subset(idx, "r", renormalize=False)
        assert kantorovich_distance(s, red) == pytest.approx(0.0, abs=1e-12)


def test_redistribute_mass_to_nearest_kept():
    s = flat_set([0.0, 1.0, 10.0], [0.2, 0.3, 0.5])
    red = redistribute_to(s, [0, 2])
    assert red.outputs[:, 0].tolist() == [0.0, 10.0]
    assert red.probabilities == pytest.approx([0.5, 0.5])
    assert red.provenance == "reduced"
    assert red.probabilities.sum() == pytest.approx(1.0)


def test_reduce_distance_shrinks_with_size():
    box = PredictionInterval("day_ahead", (22.5, 10.0), (37.5, 50.0))
    full = sample_uniform(box, 200, seed=5)
    dists = [
        kantorovich_distance(full, fast_forward_reduce(full, m))
        for m in (2, 5, 10, 40)
    ]
    assert all(a >= b - 1e-12 for a, b in zip(dists, dists[1:]))
    assert kantorovich_distance(full, fast_forward_reduce(full, 200)) == 0.0


def test_reduce_keeps_interval_and_seed():
    box = PredictionInterval("day_ahead", (0.0,), (10.0,))
    red = fast_forward_reduce(sample_uniform(box, 50, seed=77), 4)
    assert len(red) == 4
    assert red.seed == 77
    assert red.interval is box


# ---- online selection ----------------------------------------------------

def test_select_online_filters_and_renormalizes():
    s = flat_set([1.0, 5.0, 9.0], [0.25, 0.25, 0.5])
    short = PredictionInterval("short_term", (4.0,), (10.0,))
    sel = select_online(s, short)
    assert sel.outputs[:, 0].tolist() == [5.0, 9.0]
    assert sel.probabilities == pytest.approx([1 / 3, 2 / 3])
    assert sel.provenance == "selected"


def test_select_online_boundary_atom_is_kept():
    s = flat_set([4.0, 20.0], [0.5, 0.5])
    sel = select_online(s, PredictionInterval("short_term", (4.0,), (10.0,)))
    assert len(sel) == 1


def test_select_online_empty_raises():
    s = flat_set([1.0, 2.0], [0.5, 0.5])
    with pytest.raises(EmptySelectionError):
        select_online(s, PredictionInterval("short_term", (8.0,), (9.0,)))


# ---- serialization -------------------------------------------------------

def test_round_trip_preserves_everything(tmp_path):
    box = PredictionInterval("day_ahead", (22.5, 10.0), (37.5, 50.0))
    s = sample_uniform(box, 40, seed=123)
    back = loads_scenarios(dumps_scenarios(s))
    assert np.array_equal(back.outputs, s.outputs)
    assert np.array_equal(back.probabilities, s.probabilities)
    assert back.provenance == "sampled"
    assert back.seed == 123
    assert back.interval.horizon == "day_ahead"
    assert back.interval.lower == box.lower
    assert back.interval.upper == box.upper
    path = tmp_path / "s.txt"
    save_scenarios(s, path)
    disk = load_scenarios(path)
    assert np.array_equal(disk.outputs, s.outputs)
    assert dumps_scenarios(disk) == dumps_scenarios(s)


def test_round_trip_without_interval_or_seed():
    s = flat_set([0.5, 1.5], [0.5, 0.5])
    back = loads_scenarios(dumps_scenarios(s))
    assert back.seed is None
    assert back.interval is None
    assert np.array_equal(back.outputs, s.outputs)


def test_loads_rejects_malformed_text():
    with pytest.raises(ValueError):
        loads_scenarios("not a header\n1.0 1.0\n")
    good = dumps_scenarios(flat_set([1.0, 2.0], [0.5, 0.5]))
    with pytest.raises(ValueError):
        loads_scenarios(good.replace("farms 1", "farms 2"))
