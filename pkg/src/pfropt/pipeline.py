"""Offline database construction and online dispatch orchestration.

The offline stage samples the day-ahead uncertainty, reduces it to a
representative scenario set, and screens every (contingency, scenario) pair
with time-domain simulation; unstable pairs yield linear stability cuts. The
online stage selects the stored scenarios inside the short-term interval,
assembles their cuts, and solves the relaxed dispatch program. No simulation
runs online; an instrumented counter proves it.

Report files deliberately keep wall-clock values in a separate sidecar
(timings.json) so repeated runs with the same seed are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import caseio, scenarios as sc, sime
from .dynamics import (
    FaultEvent,
    SimConfig,
    TdsError,
    classify_stability,
    run_tds,
    tds_run_count,
)
from .network import NetworkCase
from .powerflow import PowerFlowError
from .scenarios import PredictionInterval, ScenarioSet
from .sdp import (
    DispatchSolution,
    build_model,
    expected_cost_coeff,
    objective_value,
    solve,
)

DB_FORMAT = "pfropt-db"
DB_VERSION = 1
REPORT_HEADER = "PFROPT-REPORT 1"


class PipelineError(RuntimeError):
    pass


# ---- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class SdpOptions:
    tolerance: float = 1e-8
    max_iter: int = 200_000
    penalty: str = "loss"
    penalty_weight: float = 0.05
    completion_weight: float = 1e-3


@dataclass(frozen=True)
class OfflineOptions:
    epsilon: float = 0.1
    delta: float = 0.01
    samples: int = 2000      # floor; raised to the sampling bound if below
    reduced: int = 50


@dataclass(frozen=True)
class OnlineOptions:
    fallback_k: int = 10
    # Cuts are first-order; the margin surface is convex in the shifted
    # generation, so a one-shot correction undershoots.  Demanding this much
    # extra margin at the cut absorbs the curvature gap.
    margin_floor: float = 0.5


@dataclass(frozen=True)
class RobustnessOptions:
    count: int = 1000
    with_cct: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 2024
    workers: int = 8
    offline: OfflineOptions = OfflineOptions()
    online: OnlineOptions = OnlineOptions()
    sdp: SdpOptions = SdpOptions()
    sim: SimConfig = SimConfig()
    robustness: RobustnessOptions = RobustnessOptions()
    contingencies: tuple[FaultEvent, ...] = ()
    cct_bracket: tuple[float, float] = (0.05, 0.5)

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        return self if seed is None else replace(self, seed=seed)


def load_config(path: str | Path | None) -> PipelineConfig:
    """YAML config with defaults for everything absent; None gives defaults."""
    if path is None:
        return PipelineConfig()
    import yaml

    raw = yaml.safe_load(Path(path).read_text()) or {}

    def sub(key, cls, **extra):
        d = dict(raw.get(key) or {})
        d.update(extra)
        return cls(**d)

    faults = tuple(
        FaultEvent(
            fault_bus=int(c["fault_bus"]),
            t0=float(c.get("t0", 0.0)),
            t_cl=float(c["t_clear"]),
            trip_line=None if c.get("trip_line") is None else int(c["trip_line"]),
        )
        for c in raw.get("contingencies") or ()
    )
    bracket = raw.get("cct_bracket")
    return PipelineConfig(
        seed=int(raw.get("seed", 2024)),
        workers=int(raw.get("workers", 8)),
        offline=sub("offline", OfflineOptions),
        online=sub("online", OnlineOptions),
        sdp=sub("sdp", SdpOptions),
        sim=sub("sim", SimConfig),
        robustness=sub("robustness", RobustnessOptions),
        contingencies=faults,
        cct_bracket=(float(bracket[0]), float(bracket[1])) if bracket else (0.05, 0.5),
    )


# ---- offline database ---------------------------------------------------------


@dataclass(frozen=True)
class StabilityRecord:
    """Screening outcome for one (contingency, scenario) pair."""

    contingency_id: int
    scenario_id: int
    status: str                               # stable | unstable | error
    eta0: float | None
    constraint: sime.TscConstraint | None
    error: str | None = None

    def to_json_dict(self) -> dict:
        d = {
            "contingency_id": self.contingency_id,
            "scenario_id": self.scenario_id,
            "status": self.status,
            "eta0": self.eta0,
            "error": self.error,
        }
        if self.constraint is not None:
            d["phi"] = list(self.constraint.phi)
            d["base_pgen_pu"] = list(self.constraint.base_pgen_pu)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "StabilityRecord":
        cut = None
        if "phi" in d:
            cut = sime.TscConstraint(
                phi=tuple(d["phi"]),
                base_pgen_pu=tuple(d["base_pgen_pu"]),
                eta0=d["eta0"],
                contingency_id=d["contingency_id"],
                scenario_id=d["scenario_id"],
            )
        return cls(
            contingency_id=d["contingency_id"],
            scenario_id=d["scenario_id"],
            status=d["status"],
            eta0=d["eta0"],
            constraint=cut,
            error=d.get("error"),
        )


@dataclass(frozen=True)
class OfflineDatabase:
    case: NetworkCase
    interval: PredictionInterval
    scenarios: ScenarioSet
    contingencies: tuple[FaultEvent, ...]
    records: tuple[StabilityRecord, ...]
    base: DispatchSolution
    meta: dict

    def records_for(self, scenario_ids) -> list[StabilityRecord]:
        wanted = set(int(i) for i in scenario_ids)
        return [r for r in self.records if r.scenario_id in wanted]

    def cuts_for(self, scenario_ids) -> list[sime.TscConstraint]:
        return [
            r.constraint
            for r in self.records_for(scenario_ids)
            if r.constraint is not None
        ]

    def save(self, path: str | Path) -> None:
        d = Path(path)
        d.mkdir(parents=True, exist_ok=True)
        (d / "MANIFEST.json").write_text(
            json.dumps(self.meta, indent=2, sort_keys=True) + "\n"
        )
        (d / "case.case").write_text(caseio.dumps_case(self.case))
        (d / "interval.json").write_text(_interval_to_json(self.interval) + "\n")
        sc.save_scenarios(self.scenarios, d / "scenarios.txt")
        (d / "base_dispatch.json").write_text(self.base.to_json() + "\n")
        (d / "contingencies.json").write_text(
            json.dumps(
                [
                    {
                        "fault_bus": f.fault_bus,
                        "t0": f.t0,
                        "t_clear": f.t_cl,
                        "trip_line": f.trip_line,
                    }
                    for f in self.contingencies
                ],
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        with open(d / "records.jsonl", "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_json_dict(), sort_keys=True) + "\n")


def _interval_to_json(iv: PredictionInterval) -> str:
    return json.dumps(
        {
            "horizon": iv.horizon,
            "lower": list(iv.lower),
            "upper": list(iv.upper),
        },
        sort_keys=True,
    )


def _interval_from_json(text: str) -> PredictionInterval:
    d = json.loads(text)
    return PredictionInterval(
        horizon=d["horizon"], lower=tuple(d["lower"]), upper=tuple(d["upper"])
    )


def load_database(path: str | Path) -> OfflineDatabase:
    d = Path(path)
    meta = json.loads((d / "MANIFEST.json").read_text())
    if meta.get("format") != DB_FORMAT:
        raise PipelineError(f"{path}: not a {DB_FORMAT} directory")
    if meta.get("db_version") != DB_VERSION:
        raise PipelineError(
            f"{path}: database version {meta.get('db_version')} not supported"
        )
    case = caseio.loads_case((d / "case.case").read_text(), meta.get("case_name", "case"))
    interval = _interval_from_json((d / "interval.json").read_text())
    scen = sc.load_scenarios(d / "scenarios.txt")
    base = DispatchSolution.from_json((d / "base_dispatch.json").read_text())
    faults = tuple(
        FaultEvent(
            fault_bus=c["fault_bus"],
            t0=c["t0"],
            t_cl=c["t_clear"],
            trip_line=c["trip_line"],
        )
        for c in json.loads((d / "contingencies.json").read_text())
    )
    records = tuple(
        StabilityRecord.from_json_dict(json.loads(line))
        for line in (d / "records.jsonl").read_text().splitlines()
        if line.strip()
    )
    return OfflineDatabase(
        case=case,
        interval=interval,
        scenarios=scen,
        contingencies=faults,
        records=records,
        base=base,
        meta=meta,
    )


# ---- offline build --------------------------------------------------------------


def base_opf(
    case: NetworkCase,
    config: PipelineConfig,
    pfr_enabled: bool = True,
    interval: PredictionInterval | None = None,
    cuts=(),
) -> DispatchSolution:
    """Dispatch at the wind forecast; errors if the solver cannot certify it."""
    model = build_model(
        case,
        cuts=cuts,
        interval=interval,
        penalty=config.sdp.penalty,
        penalty_weight=config.sdp.penalty_weight,
        completion_weight=config.sdp.completion_weight,
        pfr_enabled=pfr_enabled,
    )
    disp = solve(model, tol=config.sdp.tolerance, max_iter=config.sdp.max_iter)
    if disp.solver.state not in ("optimal", "inaccurate"):
        raise PipelineError(f"base dispatch not solvable: {disp.solver.state}")
    return disp


def _screen_pair(
    case: NetworkCase,
    base: DispatchSolution,
    scenario_mw: np.ndarray,
    sid: int,
    fault: FaultEvent,
    cid: int,
    sim: SimConfig,
) -> StabilityRecord:
    """Margin (and cut, when unstable) for one (contingency, scenario) pair."""
    try:
        margin, grouping, _ = sime.margin_for(case, base, scenario_mw, fault, sim)
        if margin.classification == "marginal" or not np.isfinite(margin.eta):
            return StabilityRecord(cid, sid, "error", None, None,
                                   error="margin undecided")
        if margin.eta >= 0.0:
            return StabilityRecord(cid, sid, "stable", float(margin.eta), None)
        sens = sime.sensitivity_vector(
            case, base, scenario_mw, fault, sid, cid, sim, grouping
        )
        cut = sime.build_constraint(sens, float(margin.eta))
        return StabilityRecord(cid, sid, "unstable", float(margin.eta), cut)
    except (TdsError, PowerFlowError, ValueError) as exc:
        return StabilityRecord(cid, sid, "error", None, None, error=str(exc))


def offline_build(
    case: NetworkCase,
    config: PipelineConfig,
    out_dir: str | Path | None = None,
    sampled: ScenarioSet | None = None,
) -> OfflineDatabase:
    """Sample, reduce, screen; the returned database is self-contained.

    ``sampled`` substitutes externally drawn day-ahead scenarios for the
    internal uniform draw (the reduction and screening stages are shared).
    """
    off = config.offline
    interval = sc.interval_from_case(case, "day_ahead")
    n_gen = len(case.generators)
    n_needed = sc.sample_complexity(off.epsilon, off.delta, n_gen)
    n_samples = max(off.samples, n_needed)

    if sampled is None:
        sampled = sc.sample_uniform(interval, n_samples, seed=config.seed)
    keep = min(off.reduced, len(sampled))
    reduced = sc.fast_forward_reduce(sampled, keep)
    # degenerate intervals make the reduction keep copies of one point;
    # collapse exact duplicates so each record is a distinct scenario
    uniq, inv = np.unique(reduced.outputs, axis=0, return_inverse=True)
    if len(uniq) < len(reduced):
        probs = np.zeros(len(uniq))
        np.add.at(probs, inv, reduced.probabilities)
        reduced = ScenarioSet(
            uniq, probs, "reduced", seed=reduced.seed, interval=reduced.interval
        )

    base = base_opf(case, config)

    pairs = [
        (cid, sid)
        for cid in range(len(config.contingencies))
        for sid in range(len(reduced))
    ]
    jobs = (
        delayed(_screen_pair)(
            case,
            base,
            reduced.outputs[sid],
            sid,
            config.contingencies[cid],
            cid,
            config.sim,
        )
        for cid, sid in pairs
    )
    records = tuple(Parallel(n_jobs=config.workers)(jobs)) if pairs else ()

    n_err = sum(1 for r in records if r.status == "error")
    meta = {
        "format": DB_FORMAT,
        "db_version": DB_VERSION,
        "case_name": case.name,
        "case_sha256": hashlib.sha256(
            caseio.dumps_case(case).encode()
        ).hexdigest(),
        "seed": config.seed,
        "epsilon": off.epsilon,
        "delta": off.delta,
        "samples": len(sampled),
        "sampling_bound": n_needed,
        "reduced": keep,
        "dt": config.sim.dt,
        "horizon": config.sim.horizon,
        "contingency_count": len(config.contingencies),
        "record_count": len(records),
        "error_count": n_err,
    }
    db = OfflineDatabase(
        case=case,
        interval=interval,
        scenarios=reduced,
        contingencies=config.contingencies,
        records=records,
        base=base,
        meta=meta,
    )
    if out_dir is not None:
        db.save(out_dir)
    return db


# ---- online dispatch ---------------------------------------------------------


@dataclass(frozen=True)
class RunReport:
    case_name: str
    dispatch: DispatchSolution
    base_cost: float
    cost: float
    cost_delta_pct: float
    selected_ids: tuple[int, ...]
    fallback_used: bool
    cuts_applied: int
    tds_calls: int
    timings: dict = field(default_factory=dict)

    @property
    def scenario_count(self) -> int:
        return len(self.selected_ids)


def _select_ids(
    reduced: ScenarioSet, short_term: PredictionInterval, fallback_k: int
) -> tuple[np.ndarray, bool]:
    lo = np.asarray(short_term.lower)
    hi = np.asarray(short_term.upper)
    inside = np.all(
        (reduced.outputs >= lo - 1e-9) & (reduced.outputs <= hi + 1e-9), axis=1
    )
    idx = np.nonzero(inside)[0]
    if idx.size:
        return idx, False
    # nothing stored inside the interval: fall back to the nearest atoms
    clipped = np.clip(reduced.outputs, lo, hi)
    dist = np.linalg.norm(reduced.outputs - clipped, axis=1)
    order = np.argsort(dist, kind="stable")
    k = min(fallback_k, len(reduced))
    return np.sort(order[:k]), True


def online_dispatch(
    db: OfflineDatabase,
    short_term: PredictionInterval,
    config: PipelineConfig,
) -> RunReport:
    """Selection, cut assembly, one conic solve; zero simulations."""
    tds_before = tds_run_count()
    timings: dict[str, float] = {}
    case = db.case

    t = time.perf_counter()
    ids, fallback = _select_ids(db.scenarios, short_term, config.online.fallback_k)
    selected = db.scenarios.subset(ids, "selected")
    cuts = [
        replace(c, eta0=c.eta0 - config.online.margin_floor)
        for c in db.cuts_for(ids)
    ]
    timings["select"] = time.perf_counter() - t

    t = time.perf_counter()
    model = build_model(
        case,
        scenarios=selected,
        cuts=cuts,
        interval=short_term,
        penalty=config.sdp.penalty,
        penalty_weight=config.sdp.penalty_weight,
        completion_weight=config.sdp.completion_weight,
    )
    timings["build"] = time.perf_counter() - t

    t = time.perf_counter()
    disp = solve(model, tol=config.sdp.tolerance, max_iter=config.sdp.max_iter)
    timings["solve"] = time.perf_counter() - t

    recourse = expected_cost_coeff(case, short_term)
    base_cost = objective_value(case, db.base.p_gen_mw, recourse, model.rho)
    cost = objective_value(case, disp.p_gen_mw, recourse, model.rho)
    delta = 100.0 * (cost - base_cost) / abs(base_cost) if base_cost else 0.0
    timings["total"] = sum(timings.values())

    tds_calls = tds_run_count() - tds_before
    return RunReport(
        case_name=case.name,
        dispatch=disp,
        base_cost=base_cost,
        cost=cost,
        cost_delta_pct=delta,
        selected_ids=tuple(int(i) for i in ids),
        fallback_used=fallback,
        cuts_applied=len(cuts),
        tds_calls=tds_calls,
        timings=timings,
    )


# ---- robustness evaluation -----------------------------------------------------


@dataclass(frozen=True)
class RobustnessReport:
    case_name: str
    scenario_count: int
    robustness: float                      # stable under every contingency
    per_contingency: tuple[float, ...]
    outcomes: tuple[tuple[bool, ...], ...]  # [scenario][contingency]
    cct_forecast: tuple[float, ...] = ()   # per contingency, nan if skipped
    seed: int | None = None


def _stable_under(
    case: NetworkCase,
    dispatch: DispatchSolution,
    scenario_mw: np.ndarray,
    fault: FaultEvent,
    sim: SimConfig,
) -> bool:
    try:
        traj = run_tds(case, dispatch, scenario_mw, fault, sim)
    except (TdsError, PowerFlowError, ValueError):
        return False
    return classify_stability(traj, sim.stable_spread).stable


def evaluate_robustness(
    case: NetworkCase,
    dispatch: DispatchSolution,
    interval: PredictionInterval,
    contingencies: tuple[FaultEvent, ...],
    count: int,
    seed: int,
    config: PipelineConfig | None = None,
) -> RobustnessReport:
    """Monte-Carlo stable fraction of the compensated dispatch."""
    if count < 1:
        raise ValueError("scenario count must be at least 1")
    config = config or PipelineConfig()
    samples = sc.sample_uniform(interval, count, seed=seed)
    if not contingencies:
        return RobustnessReport(
            case_name=case.name,
            scenario_count=count,
            robustness=1.0,
            per_contingency=(),
            outcomes=tuple(() for _ in range(count)),
            seed=seed,
        )

    def row(s_mw: np.ndarray) -> tuple[bool, ...]:
        return tuple(
            _stable_under(case, dispatch, s_mw, f, config.sim)
            for f in contingencies
        )

    rows = Parallel(n_jobs=config.workers)(
        delayed(row)(samples.outputs[i]) for i in range(count)
    )
    outcomes = tuple(rows)
    per_c = tuple(
        float(np.mean([o[c] for o in outcomes]))
        for c in range(len(contingencies))
    )
    overall = float(np.mean([all(o) for o in outcomes]))

    cct = ()
    if config.robustness.with_cct:
        forecast = np.array([w.p_forecast for w in case.wind_farms])
        vals = []
        for f in contingencies:
            try:
                est = sime.estimate_cct(
                    case, dispatch, forecast, f, config.cct_bracket, config.sim
                )
                vals.append(float(est.cct))
            except (TdsError, PowerFlowError, ValueError, RuntimeError):
                vals.append(float("nan"))
        cct = tuple(vals)

    return RobustnessReport(
        case_name=case.name,
        scenario_count=count,
        robustness=overall,
        per_contingency=per_c,
        outcomes=outcomes,
        cct_forecast=cct,
        seed=seed,
    )


def cct_curve(
    case: NetworkCase,
    dispatch: DispatchSolution,
    fault: FaultEvent,
    config: PipelineConfig,
    scenario_mw: np.ndarray | None = None,
) -> sime.CctEstimate:
    """Margin-vs-clearing-time estimate at one operating point."""
    if scenario_mw is None:
        scenario_mw = np.array([w.p_forecast for w in case.wind_farms])
    return sime.estimate_cct(
        case, dispatch, scenario_mw, fault, config.cct_bracket, config.sim
    )


# ---- report rendering -----------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_report(report, out_dir: str | Path) -> Path:
    """Write the structured report plus columnar plot data; returns the
    report path. Wall times go to timings.json only."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    lines = [REPORT_HEADER]

    if isinstance(report, RunReport):
        disp = report.dispatch
        lines += [
            "kind run",
            f"case {report.case_name}",
            f"solver-state {disp.solver.state if disp.solver else 'pinned'}",
            f"cost {_fmt(report.cost)}",
            f"base-cost {_fmt(report.base_cost)}",
            f"cost-delta-pct {_fmt(report.cost_delta_pct)}",
            f"scenario-count {report.scenario_count}",
            f"fallback {_fmt(report.fallback_used)}",
            f"cuts {report.cuts_applied}",
            f"tds-calls {report.tds_calls}",
            f"exactness-ratio {_fmt(disp.exactness_ratio)}",
            f"exact {_fmt(disp.exact)}",
            "selected-ids " + " ".join(str(i) for i in report.selected_ids),
        ]
        (d / "dispatch.json").write_text(disp.to_json() + "\n")
        (d / "timings.json").write_text(
            json.dumps(report.timings, indent=2, sort_keys=True) + "\n"
        )
    elif isinstance(report, RobustnessReport):
        lines += [
            "kind robustness",
            f"case {report.case_name}",
            f"seed {report.seed}",
            f"scenario-count {report.scenario_count}",
            f"robustness {_fmt(report.robustness)}",
            "per-contingency "
            + " ".join(_fmt(v) for v in report.per_contingency),
            "cct-forecast " + " ".join(_fmt(v) for v in report.cct_forecast),
        ]
        rows = ["scenario\t" + "\t".join(
            f"stable_c{c}" for c in range(len(report.per_contingency))
        )]
        for i, o in enumerate(report.outcomes):
            rows.append(f"{i}\t" + "\t".join("1" if b else "0" for b in o))
        (d / "outcomes.tsv").write_text("\n".join(rows) + "\n")
    else:
        raise TypeError(f"cannot render {type(report).__name__}")

    path = d / "report.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def parse_report(path: str | Path) -> dict[str, str]:
    """Inverse of render_report's report.txt: mapping of key to raw value."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise PipelineError(f"{path}: not a report file")
    out: dict[str, str] = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, _, val = ln.partition(" ")
        out[key] = val
    return out


def write_scenario_scatter(
    reduced: ScenarioSet, selected_ids, path: str | Path
) -> None:
    """Columnar scatter of the reduced set with selection marks."""
    sel = set(int(i) for i in selected_ids)
    cols = "\t".join(f"farm_{k}" for k in range(reduced.n_farms))
    rows = [f"scenario\t{cols}\tprobability\tselected"]
    for i in range(len(reduced)):
        vals = "\t".join(repr(float(v)) for v in reduced.outputs[i])
        rows.append(
            f"{i}\t{vals}\t{repr(float(reduced.probabilities[i]))}\t"
            f"{1 if i in sel else 0}"
        )
    Path(path).write_text("\n".join(rows) + "\n")


def write_margin_curve(est: sime.CctEstimate, path: str | Path) -> None:
    rows = ["t_clear\teta"]
    for t_cl, eta in est.points:
        rows.append(f"{repr(float(t_cl))}\t{repr(float(eta))}")
    Path(path).write_text("\n".join(rows) + "\n")
