"""Renewable-output scenarios: sampling, greedy reduction, online selection.

The uncertainty model is a box: each wind farm's output lies in a prediction
interval, day-ahead for the offline stage and a tighter short-term one for
dispatch time. Scenario sets are discrete measures over output vectors (MW).
Reduction is fast-forward selection under the Kantorovich transport distance;
online selection is the box-membership filter with renormalized mass.

All randomness flows through numpy's PCG64 generator with an explicit 64-bit
seed that is recorded in every serialized set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RNG_NAME = "pcg64"


class EmptySelectionError(RuntimeError):
    """No reduced scenario lies inside the short-term box."""


@dataclass(frozen=True)
class PredictionInterval:
    """Per-farm output box (MW) for one forecast horizon."""

    horizon: str  # "day_ahead" or "short_term"
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("interval bound lengths differ")
        for lo, hi in zip(self.lower, self.upper):
            if lo > hi:
                raise ValueError(f"inverted interval [{lo}, {hi}]")

    @property
    def n_farms(self) -> int:
        return len(self.lower)

    @property
    def midpoint(self) -> np.ndarray:
        return (np.asarray(self.lower) + np.asarray(self.upper)) / 2.0

    def contains_point(self, p: np.ndarray, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(
            np.all(p >= np.asarray(self.lower) - tol)
            and np.all(p <= np.asarray(self.upper) + tol)
        )

    def contains(self, other: "PredictionInterval", tol: float = 1e-9) -> bool:
        return bool(
            np.all(np.asarray(other.lower) >= np.asarray(self.lower) - tol)
            and np.all(np.asarray(other.upper) <= np.asarray(self.upper) + tol)
        )


def interval_from_case(case, horizon: str) -> PredictionInterval:
    """Box around the farm forecasts with the case's fractional half-widths."""
    if horizon == "day_ahead":
        alphas = [w.day_ahead_alpha for w in case.wind_farms]
    elif horizon == "short_term":
        alphas = [w.short_term_alpha for w in case.wind_farms]
    else:
        raise ValueError(f"unknown horizon {horizon!r}")
    lower = tuple(w.p_forecast * (1.0 - a) for w, a in zip(case.wind_farms, alphas))
    upper = tuple(w.p_forecast * (1.0 + a) for w, a in zip(case.wind_farms, alphas))
    return PredictionInterval(horizon=horizon, lower=lower, upper=upper)


@dataclass(frozen=True)
class Scenario:
    outputs: tuple[float, ...]  # MW per farm
    probability: float


class ScenarioSet:
    """Discrete measure over wind-output vectors.

    Immutable by convention: the wrapped arrays are set read-only.
    """

    def __init__(
        self,
        outputs: np.ndarray,
        probabilities: np.ndarray,
        provenance: str,
        seed: int | None = None,
        interval: PredictionInterval | None = None,
    ):
        outputs = np.atleast_2d(np.asarray(outputs, dtype=float)).copy()
        probabilities = np.asarray(probabilities, dtype=float).copy()
        if outputs.shape[0] != probabilities.shape[0]:
            raise ValueError("outputs/probabilities length mismatch")
        if np.any(probabilities < -1e-12):
            raise ValueError("negative scenario probability")
        outputs.setflags(write=False)
        probabilities.setflags(write=False)
        self.outputs = outputs
        self.probabilities = probabilities
        self.provenance = provenance
        self.seed = seed
        self.interval = interval

    def __len__(self) -> int:
        return self.outputs.shape[0]

    @property
    def n_farms(self) -> int:
        return self.outputs.shape[1]

    def scenario(self, i: int) -> Scenario:
        return Scenario(tuple(self.outputs[i]), float(self.probabilities[i]))

    def subset(self, idx, provenance: str, renormalize: bool = True) -> "ScenarioSet":
        idx = np.asarray(idx, dtype=int)
        probs = self.probabilities[idx]
        if renormalize:
            total = probs.sum()
            if total <= 0:
                raise ValueError("subset carries no mass")
            probs = probs / total
        return ScenarioSet(
            self.outputs[idx], probs, provenance, seed=self.seed, interval=self.interval
        )


def sample_complexity(epsilon: float, delta: float, n: int) -> int:
    """Smallest scenario count guaranteeing the (epsilon, delta) violation bound
    for an n-dimensional convex decision."""
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if n < 1:
        raise ValueError(f"decision dimension must be >= 1, got {n}")
    bound = math.e / (epsilon * (math.e - 1.0)) * (-math.log(delta) + n - 1)
    return int(math.ceil(bound))


def sample_uniform(
    interval: PredictionInterval, count: int, seed: int
) -> ScenarioSet:
    """``count`` iid draws, each farm uniform on its interval; mass 1/count."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.asarray(interval.lower)
    hi = np.asarray(interval.upper)
    outputs = rng.uniform(0.0, 1.0, size=(count, interval.n_farms)) * (hi - lo) + lo
    probs = np.full(count, 1.0 / count)
    return ScenarioSet(outputs, probs, "sampled", seed=seed, interval=interval)


def _pairwise_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def kantorovich_distance(a: ScenarioSet, b: ScenarioSet, cost=None) -> float:
    """Transport distance from a onto b's support.

    Valid for the reduction use-case (support of b inside support of a):
    every atom of a ships its whole mass to the nearest kept atom.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty scenario set")
    if cost is None:
        C = _pairwise_cost(a.outputs, b.outputs)
    else:
        C = np.array(
            [[cost(x, y) for y in b.outputs] for x in a.outputs], dtype=float
        )
    return float(np.dot(a.probabilities, C.min(axis=1)))


def fast_forward_indices(scenario_set: ScenarioSet, keep: int) -> np.ndarray:
    """Greedy forward selection of ``keep`` atom indices, each step picking
    the atom whose addition minimizes the transport distance to the full
    set; ties go to the lowest index. Returns the sorted index array."""
    n = len(scenario_set)
    if not (1 <= keep <= n):
        raise ValueError(f"keep must be in [1, {n}], got {keep}")

    p = scenario_set.probabilities
    D = _pairwise_cost(scenario_set.outputs, scenario_set.outputs)

    selected: list[int] = []
    # distance of every atom to its nearest selected atom so far
    d_near = np.full(n, np.inf)
    for _ in range(keep):
        cand = np.minimum(d_near[:, None], D)  # (n, n): col j = selecting j
        obj = p @ cand
        obj[selected] = np.inf
        j = int(np.argmin(obj))  # argmin takes the first minimum: lowest index
        selected.append(j)
        d_near = np.minimum(d_near, D[:, j])
    return np.array(sorted(selected), dtype=int)


def redistribute_to(scenario_set: ScenarioSet, kept) -> ScenarioSet:
    """Restriction to the atoms at ``kept``; every deleted atom hands its
    mass to the nearest kept atom."""
    kept = np.asarray(kept, dtype=int)
    p = scenario_set.probabilities
    D = _pairwise_cost(scenario_set.outputs, scenario_set.outputs[kept])
    nearest = np.argmin(D, axis=1)
    new_p = np.zeros(len(kept))
    np.add.at(new_p, nearest, p)
    return ScenarioSet(
        scenario_set.outputs[kept],
        new_p,
        "reduced",
        seed=scenario_set.seed,
        interval=scenario_set.interval,
    )


def fast_forward_reduce(scenario_set: ScenarioSet, keep: int) -> ScenarioSet:
    """Reduction to ``keep`` atoms by greedy forward selection.

    Deleted atoms hand their mass to the nearest kept atom.
    """
    return redistribute_to(scenario_set, fast_forward_indices(scenario_set, keep))


def select_online(
    reduced: ScenarioSet, short_term: PredictionInterval
) -> ScenarioSet:
    """Atoms of the reduced set inside the short-term box, mass renormalized."""
    lo = np.asarray(short_term.lower)
    hi = np.asarray(short_term.upper)
    inside = np.all(
        (reduced.outputs >= lo - 1e-9) & (reduced.outputs <= hi + 1e-9), axis=1
    )
    idx = np.nonzero(inside)[0]
    if idx.size == 0:
        raise EmptySelectionError(
            "no reduced scenario falls inside the short-term interval"
        )
    return reduced.subset(idx, "selected")


# ---- columnar text serialization ----------------------------------------

_SCEN_HEADER = "PFROPT-SCENARIOS 1"


def dumps_scenarios(s: ScenarioSet) -> str:
    out = [_SCEN_HEADER]
    out.append(f"provenance {s.provenance}")
    out.append(f"rng {RNG_NAME}")
    out.append(f"seed {'none' if s.seed is None else s.seed}")
    out.append(f"farms {s.n_farms}")
    if s.interval is not None:
        out.append(f"horizon {s.interval.horizon}")
        out.append(
            "interval_low " + " ".join(repr(float(v)) for v in s.interval.lower)
        )
        out.append(
            "interval_high " + " ".join(repr(float(v)) for v in s.interval.upper)
        )
    out.append("columns " + " ".join(f"p_w_{k}" for k in range(s.n_farms)) + " probability")
    for i in range(len(s)):
        row = " ".join(repr(float(v)) for v in s.outputs[i])
        out.append(f"{row} {float(s.probabilities[i])!r}")
    return "\n".join(out) + "\n"


def loads_scenarios(text: str) -> ScenarioSet:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _SCEN_HEADER:
        raise ValueError(f"missing '{_SCEN_HEADER}' header")
    meta: dict[str, str] = {}
    rows: list[list[float]] = []
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] in {
            "provenance", "rng", "seed", "farms", "horizon",
            "interval_low", "interval_high", "columns",
        }:
            meta[tok[0]] = " ".join(tok[1:])
        else:
            rows.append([float(v) for v in tok])
    n_farms = int(meta["farms"])
    data = np.array(rows, dtype=float)
    if data.shape[1] != n_farms + 1:
        raise ValueError("scenario row width does not match farm count")
    interval = None
    if "interval_low" in meta:
        interval = PredictionInterval(
            horizon=meta.get("horizon", "day_ahead"),
            lower=tuple(float(v) for v in meta["interval_low"].split()),
            upper=tuple(float(v) for v in meta["interval_high"].split()),
        )
    seed = None if meta.get("seed", "none") == "none" else int(meta["seed"])
    return ScenarioSet(
        data[:, :n_farms], data[:, n_farms], meta.get("provenance", "sampled"),
        seed=seed, interval=interval,
    )


def save_scenarios(s: ScenarioSet, path: str | Path) -> None:
    Path(path).write_text(dumps_scenarios(s))


def load_scenarios(path: str | Path) -> ScenarioSet:
    return loads_scenarios(Path(path).read_text())
