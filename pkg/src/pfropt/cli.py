"""Command-line front end.

Subcommands mirror the pipeline stages: ``offline-build`` writes the
screening database, ``online-dispatch`` solves against it, ``simulate`` and
``cct`` drive single time-domain studies, ``evaluate-robustness`` runs the
Monte-Carlo check, and ``reduce-scenarios`` exposes the reduction step on
its own. Every subcommand accepts --case, --config, --seed, and --out.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import caseio, scenarios as sc
from .caseio import CaseFormatError
from .dynamics import TdsError, classify_stability, dump_trajectory_text, run_tds
from .network import NetworkCase
from .pipeline import (
    PipelineConfig,
    PipelineError,
    REPORT_HEADER,
    base_opf,
    cct_curve,
    evaluate_robustness,
    load_config,
    load_database,
    offline_build,
    online_dispatch,
    render_report,
    write_margin_curve,
    write_scenario_scatter,
)
from .powerflow import PowerFlowError
from .sdp import load_dispatch


def _load_case(arg: str) -> NetworkCase:
    p = Path(arg)
    if p.exists():
        return caseio.load_case(p)
    return caseio.load_bundled(arg)


def _load_config(arg: str | None, seed: int | None) -> PipelineConfig:
    if arg is None:
        cfg = PipelineConfig()
    else:
        p = Path(arg)
        if not p.exists():
            p = caseio.bundled_path(f"{arg}.yaml")
        cfg = load_config(p)
    return cfg.with_seed(seed)


def _load_dispatch(arg: str | None, case: NetworkCase, cfg: PipelineConfig):
    if arg is not None:
        return load_dispatch(arg)
    return base_opf(case, cfg)


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",") if v.strip()])


def _contingency(cfg: PipelineConfig, index: int):
    if not cfg.contingencies:
        raise PipelineError("config declares no contingencies")
    if not (0 <= index < len(cfg.contingencies)):
        raise PipelineError(
            f"contingency index {index} out of range "
            f"[0, {len(cfg.contingencies) - 1}]"
        )
    return cfg.contingencies[index]


def _out_dir(arg: str) -> Path:
    d = Path(arg)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_offline_build(args) -> int:
    case = _load_case(args.case)
    cfg = _load_config(args.config, args.seed)
    db = offline_build(case, cfg, out_dir=args.out)
    n_cut = sum(1 for r in db.records if r.status == "unstable")
    print(
        f"offline-build: {db.meta['samples']} sampled -> "
        f"{db.meta['reduced']} kept, {db.meta['record_count']} records "
        f"({n_cut} cuts, {db.meta['error_count']} errors) -> {args.out}"
    )
    return 0


def cmd_online_dispatch(args) -> int:
    cfg = _load_config(args.config, args.seed)
    db = load_database(args.db)
    if args.lower or args.upper:
        if not (args.lower and args.upper):
            raise PipelineError("--lower and --upper go together")
        box = sc.PredictionInterval(
            "short_term", tuple(_floats(args.lower)), tuple(_floats(args.upper))
        )
    else:
        box = sc.interval_from_case(db.case, "short_term")
    rep = online_dispatch(db, box, cfg)
    out = _out_dir(args.out)
    render_report(rep, out)
    write_scenario_scatter(db.scenarios, rep.selected_ids, out / "scenarios.tsv")
    print(
        f"online-dispatch: {rep.cuts_applied} cuts over "
        f"{rep.scenario_count} scenarios, cost {rep.cost:.2f} "
        f"({rep.cost_delta_pct:+.3f}% vs base), tds-calls {rep.tds_calls} "
        f"-> {out / 'report.txt'}"
    )
    return 0


def cmd_simulate(args) -> int:
    case = _load_case(args.case)
    cfg = _load_config(args.config, args.seed)
    disp = _load_dispatch(args.dispatch, case, cfg)
    fault = _contingency(cfg, args.contingency)
    scenario = (
        _floats(args.scenario)
        if args.scenario
        else np.array([w.p_forecast for w in case.wind_farms])
    )
    traj = run_tds(case, disp, scenario, fault, cfg.sim)
    verdict = classify_stability(traj, cfg.sim.stable_spread)
    out = _out_dir(args.out)
    dump_trajectory_text(traj, out / "trajectory.txt")
    lines = [
        REPORT_HEADER,
        "kind simulate",
        f"case {case.name}",
        f"contingency {args.contingency}",
        f"stable {1 if verdict.stable else 0}",
        f"spread-max {verdict.max_spread!r}",
        f"steps {len(traj.t)}",
        f"t-cl {traj.t_cl!r}",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print(
        f"simulate: {'stable' if verdict.stable else 'unstable'}, "
        f"max spread {verdict.max_spread:.3f} rad, {len(traj.t)} steps "
        f"-> {out / 'trajectory.txt'}"
    )
    return 0


def cmd_cct(args) -> int:
    case = _load_case(args.case)
    cfg = _load_config(args.config, args.seed)
    disp = _load_dispatch(args.dispatch, case, cfg)
    fault = _contingency(cfg, args.contingency)
    scenario = _floats(args.scenario) if args.scenario else None
    if args.bracket:
        lo, hi = _floats(args.bracket)
        cfg = replace(cfg, cct_bracket=(float(lo), float(hi)))
    est = cct_curve(case, disp, fault, cfg, scenario_mw=scenario)
    out = _out_dir(args.out)
    write_margin_curve(est, out / "margin_curve.tsv")
    lines = [
        REPORT_HEADER,
        "kind cct",
        f"case {case.name}",
        f"contingency {args.contingency}",
        f"cct {est.cct!r}",
        f"refined {1 if est.refined else 0}",
        f"points {len(est.points)}",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print(f"cct: {est.cct:.4f} s -> {out / 'margin_curve.tsv'}")
    return 0


def cmd_evaluate_robustness(args) -> int:
    case = _load_case(args.case)
    cfg = _load_config(args.config, args.seed)
    disp = _load_dispatch(args.dispatch, case, cfg)
    interval = sc.interval_from_case(case, "short_term")
    count = args.count if args.count else cfg.robustness.count
    rep = evaluate_robustness(
        case, disp, interval, cfg.contingencies, count, cfg.seed, cfg
    )
    out = _out_dir(args.out)
    render_report(rep, out)
    print(
        f"evaluate-robustness: {rep.robustness:.4f} over {count} scenarios "
        f"x {len(cfg.contingencies)} contingencies -> {out / 'report.txt'}"
    )
    return 0


def cmd_reduce_scenarios(args) -> int:
    case = _load_case(args.case)
    cfg = _load_config(args.config, args.seed)
    if args.scenarios:
        full = sc.load_scenarios(args.scenarios)
    else:
        interval = sc.interval_from_case(case, "day_ahead")
        count = args.count if args.count else cfg.offline.samples
        full = sc.sample_uniform(interval, count, seed=cfg.seed)
    keep = args.keep if args.keep else cfg.offline.reduced
    reduced = sc.fast_forward_reduce(full, min(keep, len(full)))
    dist = sc.kantorovich_distance(full, reduced)
    out = _out_dir(args.out)
    sc.save_scenarios(reduced, out / "scenarios.txt")
    write_scenario_scatter(reduced, (), out / "scenarios.tsv")
    print(
        f"reduce-scenarios: {len(full)} -> {len(reduced)}, "
        f"transport distance {dist:.6f} -> {out / 'scenarios.txt'}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pfropt",
        description="Stability-constrained dispatch with power flow routers",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--case", default="wscc9",
                       help="case file path or bundled case name")
        p.add_argument("--config", default=None,
                       help="YAML settings path or bundled config name")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default="pfropt-out",
                       help="output directory")

    p = sub.add_parser("offline-build", help="sample, reduce, screen, store")
    common(p)
    p.set_defaults(func=cmd_offline_build)

    p = sub.add_parser("online-dispatch", help="solve against a stored database")
    common(p)
    p.add_argument("--db", required=True, help="offline database directory")
    p.add_argument("--lower", default=None, help="short-term lower bounds, MW csv")
    p.add_argument("--upper", default=None, help="short-term upper bounds, MW csv")
    p.set_defaults(func=cmd_online_dispatch)

    p = sub.add_parser("simulate", help="one fault simulation")
    common(p)
    p.add_argument("--dispatch", default=None, help="dispatch JSON (default: base OPF)")
    p.add_argument("--contingency", type=int, default=0, help="config contingency index")
    p.add_argument("--scenario", default=None, help="wind MW csv (default: forecast)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cct", help="critical clearing time at one operating point")
    common(p)
    p.add_argument("--dispatch", default=None, help="dispatch JSON (default: base OPF)")
    p.add_argument("--contingency", type=int, default=0, help="config contingency index")
    p.add_argument("--scenario", default=None, help="wind MW csv (default: forecast)")
    p.add_argument("--bracket", default=None, help="clearing-time bracket, csv pair")
    p.set_defaults(func=cmd_cct)

    p = sub.add_parser("evaluate-robustness", help="Monte-Carlo stability fraction")
    common(p)
    p.add_argument("--dispatch", default=None, help="dispatch JSON (default: base OPF)")
    p.add_argument("--count", type=int, default=None, help="scenario count")
    p.set_defaults(func=cmd_evaluate_robustness)

    p = sub.add_parser("reduce-scenarios", help="scenario reduction on its own")
    common(p)
    p.add_argument("--scenarios", default=None, help="input scenario file")
    p.add_argument("--count", type=int, default=None, help="samples to draw when no input")
    p.add_argument("--keep", type=int, default=None, help="atoms to retain")
    p.set_defaults(func=cmd_reduce_scenarios)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, CaseFormatError, TdsError, PowerFlowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
