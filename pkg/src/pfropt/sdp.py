"""Relaxed dispatch optimization over the lifted terminal-voltage matrix.

The nonconvex dispatch problem is lifted to W = V V* over the 2E stacked
branch-terminal voltages, the rank condition dropped, and the complex
Hermitian program realified into a symmetric PSD block of doubled dimension:

    W = A + iB   maps to   X = [[A, -B], [B, A]]  (4E x 4E, PSD)

The block structure is not enforced; every Hermitian functional is stamped as
the J-averaged real functional, so any feasible real X corresponds to a
feasible Hermitian W with identical constraint and objective values (average
X with J'XJ, both PSD).

Constraint blocks, tagged by name:
  balance-P/Q   nodal power balance through the terminal flows (forecast wind)
  vband         bus voltage band on the auxiliary W_i = |V_i|^2
  pbox/qbox     generation boxes; the active box is tightened so the
                participation-compensated output stays inside it for every
                deviation in the compensation interval
  rt-mag        router magnitude range tying terminal diagonals to W_i
  rt-ang        angle range on same-bus terminal pairs (tan envelope)
  rt-sec        secant support cutting the lens off the angle relaxation
  rt-eq         degenerate ranges collapse to equalities (routerless ends)
  cut#k         linear stability cuts from the offline database

A small branch-loss penalty (active + reactive, linear in W) tilts the
objective so the optimum is generically unique and rank-1; weight is
configurable and zero disables it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .admittance import TerminalMap
from .conic import (
    BoxBlock,
    ConeProgram,
    PsdBlock,
    Solution,
    SolverStatus,
    solve_admm,
    svec_coeff,
    svec_index,
    svec_size,
)
from .network import NetworkCase, PfrLimits, terminal_angle_bounds
from .scenarios import PredictionInterval, ScenarioSet
from .sime import TscConstraint

DEGENERATE = 1e-12


@dataclass(frozen=True)
class RecourseCost:
    """Quadratic recourse pricing of participation-factor response."""

    lam: np.ndarray        # farm prediction-error covariance (MW^2), diagonal
    c2_prime: np.ndarray   # per generator, $/h scale factor on rho^2

    @property
    def total_variance(self) -> float:
        return float(self.lam.sum())


def expected_cost_coeff(case: NetworkCase, interval: PredictionInterval) -> RecourseCost:
    """Uniform errors on the interval: variance (half-width)^2 / 3 per farm."""
    hw = (np.asarray(interval.upper) - np.asarray(interval.lower)) / 2.0
    lam = np.diag(hw * hw / 3.0) if hw.size else np.zeros((0, 0))
    total = float(lam.sum())
    c2p = np.array([g.c2 * total for g in case.generators])
    return RecourseCost(lam=lam, c2_prime=c2p)


@dataclass(frozen=True)
class DispatchSolution:
    """Dispatch plus router settings recovered from one solve (or pinned)."""

    case_name: str
    p_gen_mw: tuple[float, ...]
    q_gen_mvar: tuple[float, ...]
    rho: tuple[float, ...]
    gamma: tuple[complex, ...]          # per terminal index
    terminal_lines: tuple[tuple[int, int], ...]  # (line_id, end) per terminal
    v_bus: tuple[complex, ...]          # recovered bus voltages (p.u.)
    bus_ids: tuple[int, ...]
    gen_buses: tuple[int, ...]
    base_mva: float
    objective: float                    # $/h including recourse and constants
    exactness_ratio: float              # lambda1 / lambda2 of W
    recovery_residual: float            # ||W - vv*||_F / max(1, ||W||_F)
    exact: bool
    solver: SolverStatus | None = None

    @property
    def p_gen_pu(self) -> np.ndarray:
        return np.asarray(self.p_gen_mw) / self.base_mva

    @property
    def q_gen_pu(self) -> np.ndarray:
        return np.asarray(self.q_gen_mvar) / self.base_mva

    @property
    def v_setpoint(self) -> dict[int, float]:
        pos = {b: k for k, b in enumerate(self.bus_ids)}
        return {g: abs(self.v_bus[pos[g]]) for g in self.gen_buses}

    def gamma_map(self) -> dict[tuple[int, int], complex]:
        return {
            le: g for le, g in zip(self.terminal_lines, self.gamma)
        }

    def with_pgen(self, p_gen_pu) -> "DispatchSolution":
        mw = tuple(float(v) * self.base_mva for v in np.asarray(p_gen_pu))
        return replace(self, p_gen_mw=mw)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        ratio = self.exactness_ratio
        d = {
            "case_name": self.case_name,
            "exactness_ratio": None if not math.isfinite(ratio) else ratio,
            "p_gen_mw": list(self.p_gen_mw),
            "q_gen_mvar": list(self.q_gen_mvar),
            "rho": list(self.rho),
            "gamma_re": [g.real for g in self.gamma],
            "gamma_im": [g.imag for g in self.gamma],
            "terminal_lines": [list(t) for t in self.terminal_lines],
            "v_bus_re": [v.real for v in self.v_bus],
            "v_bus_im": [v.imag for v in self.v_bus],
            "bus_ids": list(self.bus_ids),
            "gen_buses": list(self.gen_buses),
            "base_mva": self.base_mva,
            "objective": self.objective,
            "recovery_residual": self.recovery_residual,
            "exact": self.exact,
        }
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DispatchSolution":
        d = json.loads(text)
        return cls(
            case_name=d["case_name"],
            p_gen_mw=tuple(d["p_gen_mw"]),
            q_gen_mvar=tuple(d["q_gen_mvar"]),
            rho=tuple(d["rho"]),
            gamma=tuple(
                complex(a, b) for a, b in zip(d["gamma_re"], d["gamma_im"])
            ),
            terminal_lines=tuple((int(a), int(b)) for a, b in d["terminal_lines"]),
            v_bus=tuple(
                complex(a, b) for a, b in zip(d["v_bus_re"], d["v_bus_im"])
            ),
            bus_ids=tuple(d["bus_ids"]),
            gen_buses=tuple(d["gen_buses"]),
            base_mva=d["base_mva"],
            objective=d["objective"],
            exactness_ratio=(float("inf") if d["exactness_ratio"] is None else d["exactness_ratio"]),
            recovery_residual=d["recovery_residual"],
            exact=d["exact"],
        )

    @classmethod
    def pinned(
        cls,
        case: NetworkCase,
        p_gen_mw,
        v_setpoints: dict[int, float],
        q_gen_mvar=None,
        gamma: dict[tuple[int, int], complex] | None = None,
        rho=None,
    ) -> "DispatchSolution":
        """Hand-built dispatch (no optimization), e.g. for pinned test cases."""
        tmap = TerminalMap(case)
        ng = len(case.generators)
        rho = tuple(rho) if rho is not None else tuple([1.0 / ng] * ng)
        gam = [1.0 + 0.0j] * len(tmap)
        if gamma:
            for (lid, end), g in gamma.items():
                gam[tmap.index(lid, end)] = complex(g)
        v_bus = []
        for b in case.buses:
            mag = v_setpoints.get(b.bus_id, 1.0)
            v_bus.append(complex(mag, 0.0))
        q = tuple(q_gen_mvar) if q_gen_mvar is not None else tuple([0.0] * ng)
        return cls(
            case_name=case.name,
            p_gen_mw=tuple(float(v) for v in p_gen_mw),
            q_gen_mvar=q,
            rho=rho,
            gamma=tuple(gam),
            terminal_lines=tuple(tmap.describe(k) for k in range(len(tmap))),
            v_bus=tuple(v_bus),
            bus_ids=tuple(b.bus_id for b in case.buses),
            gen_buses=tuple(g.bus for g in case.generators),
            base_mva=case.base_mva,
            objective=float("nan"),
            exactness_ratio=float("inf"),
            recovery_residual=0.0,
            exact=True,
        )


def save_dispatch(d: DispatchSolution, path: str | Path) -> None:
    Path(path).write_text(d.to_json() + "\n")


def load_dispatch(path: str | Path) -> DispatchSolution:
    return DispatchSolution.from_json(Path(path).read_text())


# ---- model assembly ---------------------------------------------------------


class _Stamper:
    """Accumulates tagged sparse rows over the variable layout
    [svec(X) | W_bus | P_G | Q_G | slacks]."""

    def __init__(self, case: NetworkCase, tmap: TerminalMap):
        self.case = case
        self.tmap = tmap
        self.nt = len(tmap)            # 2E
        self.dim = 2 * self.nt         # realified PSD dimension 4E
        self.n_svec = svec_size(self.dim)
        self.n_bus = case.n_bus
        self.ng = len(case.generators)
        self.off_w = self.n_svec
        self.off_p = self.off_w + self.n_bus
        self.off_q = self.off_p + self.ng
        self.off_s = self.off_q + self.ng
        self.rows: list[dict[int, float]] = []
        self.rhs: list[float] = []
        self.tags: list[str] = []
        self.n_slack = 0
        self.slack_names: list[str] = []

    # -- column helpers ------------------------------------------------------

    def col_w(self, bus_id: int) -> int:
        return self.off_w + self.case.bus_position(bus_id)

    def col_p(self, gen_idx: int) -> int:
        return self.off_p + gen_idx

    def col_q(self, gen_idx: int) -> int:
        return self.off_q + gen_idx

    def _x(self, i: int, j: int, coeff: float, into: dict[int, float]) -> None:
        col = svec_index(min(i, j), max(i, j), self.dim)
        into[col] = into.get(col, 0.0) + svec_coeff(i, j, coeff)

    def re_w(self, a: int, b: int, coeff: float, into: dict[int, float]) -> None:
        """coeff * Re W_ab, J-averaged."""
        n2 = self.nt
        if a == b:
            self._x(a, a, 0.5 * coeff, into)
            self._x(n2 + a, n2 + a, 0.5 * coeff, into)
        else:
            self._x(a, b, 0.5 * coeff, into)
            self._x(n2 + a, n2 + b, 0.5 * coeff, into)

    def im_w(self, a: int, b: int, coeff: float, into: dict[int, float]) -> None:
        """coeff * Im W_ab, J-averaged; antisymmetric in (a, b)."""
        if a == b:
            return
        n2 = self.nt
        self._x(n2 + a, b, 0.5 * coeff, into)
        self._x(a, n2 + b, -0.5 * coeff, into)

    def flow_terms(self, a: int, p_coeff: float, q_coeff: float, into: dict[int, float]) -> None:
        """Stamp coeffs of the complex power flowing from terminal a into its
        line: S_a = (y_s + y_e)* W_aa - y_s* W_ab."""
        lid, _ = self.tmap.describe(a)
        ln = self.case.line(lid)
        b = self.tmap.other_end(a)
        y_s = ln.y_series
        y_t = y_s + ln.y_shunt_end
        g_t, b_t = y_t.real, y_t.imag
        g_s, b_s = y_s.real, y_s.imag
        if p_coeff:
            self.re_w(a, a, p_coeff * g_t, into)
            self.re_w(a, b, -p_coeff * g_s, into)
            self.im_w(a, b, -p_coeff * b_s, into)
        if q_coeff:
            self.re_w(a, a, -q_coeff * b_t, into)
            self.im_w(a, b, -q_coeff * g_s, into)
            self.re_w(a, b, q_coeff * b_s, into)

    # -- row helpers -----------------------------------------------------------

    def add_row(self, tag: str, cols: dict[int, float], rhs: float,
                slack: int = 0) -> None:
        """slack=+1: expr + s = rhs (<=); slack=-1: expr - s = rhs (>=)."""
        row = dict(cols)
        if slack:
            col = self.off_s + self.n_slack
            row[col] = float(slack)
            self.n_slack += 1
            self.slack_names.append(tag)
        self.rows.append(row)
        self.rhs.append(float(rhs))
        self.tags.append(tag)


@dataclass
class SdpModel:
    program: ConeProgram
    case: NetworkCase
    terminals: TerminalMap
    row_tags: tuple[str, ...]
    obj_const: float                     # $/h: c0 terms + recourse
    recourse: RecourseCost
    rho: tuple[float, ...]
    cuts: tuple[TscConstraint, ...]
    penalty: str
    penalty_weight: float
    pfr_enabled: bool
    n_svec: int
    off_w: int
    off_p: int
    off_q: int
    scenario_count: int

    def audit(self) -> dict[str, int]:
        """Row count per tag family (text before '#' or '@')."""
        out: dict[str, int] = {}
        for t in self.row_tags:
            key = t.split("@")[0].split("#")[0]
            out[key] = out.get(key, 0) + 1
        return out

    def dump(self, path: str | Path) -> None:
        """Constraint-tagged sparse triplets, solver independent."""
        A = sp.coo_matrix(self.program.A)
        lines = ["# row tag col value"]
        tag_of = list(self.row_tags)
        for r, c, v in zip(A.row, A.col, A.data):
            lines.append(f"{r} {tag_of[r]} {c} {float(v)!r}")
        lines.append("# rhs")
        for r, v in enumerate(self.program.b):
            lines.append(f"{r} {tag_of[r]} rhs {float(v)!r}")
        lines.append("# objective: col p_diag q")
        nz = np.nonzero((self.program.p_diag != 0) | (self.program.q != 0))[0]
        for c in nz:
            lines.append(
                f"obj {c} {float(self.program.p_diag[c])!r} {float(self.program.q[c])!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


def _effective_pfr(ln, enabled: bool) -> PfrLimits:
    if not enabled:
        return PfrLimits()
    return ln.pfr


def build_model(
    case: NetworkCase,
    scenarios: ScenarioSet | None = None,
    cuts: tuple[TscConstraint, ...] | list[TscConstraint] = (),
    rho=None,
    interval: PredictionInterval | None = None,
    penalty: str = "loss",
    penalty_weight: float = 0.05,
    completion_weight: float = 1e-3,
    pfr_enabled: bool = True,
) -> SdpModel:
    """Assemble the relaxed dispatch program.

    :param interval: compensation interval used to tighten the generation
        boxes (the dispatch plus participation response must stay inside the
        physical box for every total deviation the interval allows). None
        leaves the physical box.
    :param penalty: "loss" (branch active+reactive loss), "qgen" (total
        reactive generation) or "none".
    :param completion_weight: small reward on Re W_ab of same-bus terminal
        pairs whose router ranges are non-degenerate. Those entries appear in
        no flow or cost term, so the optimal face contains a segment of
        rank-2 points with identical objective; the reward selects the
        coherent (rank-1) endpoint. Zero disables it.
    """
    tmap = TerminalMap(case)
    st = _Stamper(case, tmap)
    ng = st.ng
    base = case.base_mva
    if rho is None:
        rho = np.full(ng, 1.0 / ng)
    rho = np.asarray(rho, dtype=float)
    if abs(rho.sum() - 1.0) > 1e-9:
        raise ValueError("participation factors must sum to 1")

    # -- nodal balance at the forecast injection (tag balance-P/Q@bus) -------
    gens_at: dict[int, list[int]] = {}
    for gi, g in enumerate(case.generators):
        gens_at.setdefault(g.bus, []).append(gi)
    wind_at = {w.bus: w.p_forecast / base for w in case.wind_farms}

    for b in case.buses:
        p_row: dict[int, float] = {}
        q_row: dict[int, float] = {}
        for a in tmap.at_bus(b.bus_id):
            st.flow_terms(a, 1.0, 0.0, p_row)
            st.flow_terms(a, 0.0, 1.0, q_row)
        for gi in gens_at.get(b.bus_id, []):
            p_row[st.col_p(gi)] = -1.0
            q_row[st.col_q(gi)] = -1.0
        rhs_p = wind_at.get(b.bus_id, 0.0) - b.p_load / base
        rhs_q = -b.q_load / base
        st.add_row(f"balance-P@{b.bus_id}", p_row, rhs_p)
        st.add_row(f"balance-Q@{b.bus_id}", q_row, rhs_q)

    # -- router range constraints --------------------------------------------
    floating_pairs: list[tuple[int, int]] = []
    for b in case.buses:
        terms = tmap.at_bus(b.bus_id)
        wcol = st.col_w(b.bus_id)
        for a in terms:
            lid, _ = tmap.describe(a)
            lim = _effective_pfr(case.line(lid), pfr_enabled)
            diag: dict[int, float] = {}
            st.re_w(a, a, 1.0, diag)
            if lim.gamma_max - lim.gamma_min <= DEGENERATE:
                row = dict(diag)
                row[wcol] = -lim.gamma_min ** 2
                st.add_row(f"rt-eq@{b.bus_id}", row, 0.0)
            else:
                hi = dict(diag)
                hi[wcol] = -lim.gamma_max ** 2
                st.add_row(f"rt-mag@{b.bus_id}", hi, 0.0, slack=+1)
                lo = dict(diag)
                lo[wcol] = -lim.gamma_min ** 2
                st.add_row(f"rt-mag@{b.bus_id}", lo, 0.0, slack=-1)

        for ii in range(len(terms)):
            for jj in range(ii + 1, len(terms)):
                a, c = terms[ii], terms[jj]
                lim_a = _effective_pfr(case.line(tmap.describe(a)[0]), pfr_enabled)
                lim_c = _effective_pfr(case.line(tmap.describe(c)[0]), pfr_enabled)
                th_lo, th_hi = terminal_angle_bounds(lim_a, lim_c)
                mag_deg = (
                    lim_a.gamma_max - lim_a.gamma_min <= DEGENERATE
                    and lim_c.gamma_max - lim_c.gamma_min <= DEGENERATE
                )
                ang_deg = th_hi - th_lo <= DEGENERATE
                if mag_deg and ang_deg:
                    # fixed ratio pair: W_ac = g_a g_c e^{i th} W_i exactly
                    ga_gc = lim_a.gamma_min * lim_c.gamma_min
                    row_re: dict[int, float] = {}
                    st.re_w(a, c, 1.0, row_re)
                    row_re[wcol] = -ga_gc * math.cos(th_hi)
                    st.add_row(f"rt-eq@{b.bus_id}", row_re, 0.0)
                    row_im: dict[int, float] = {}
                    st.im_w(a, c, 1.0, row_im)
                    row_im[wcol] = -ga_gc * math.sin(th_hi)
                    st.add_row(f"rt-eq@{b.bus_id}", row_im, 0.0)
                    continue
                if max(abs(th_lo), abs(th_hi)) >= math.pi / 2 - 1e-9:
                    raise ValueError(
                        "router angle ranges give a terminal pair spanning 90 degrees"
                    )
                floating_pairs.append((a, c))
                if ang_deg:
                    # equal fixed angles: Im W_ac = tan(th) Re W_ac exactly
                    row: dict[int, float] = {}
                    st.im_w(a, c, 1.0, row)
                    st.re_w(a, c, -math.tan(th_hi), row)
                    st.add_row(f"rt-eq@{b.bus_id}", row, 0.0)
                else:
                    hi_row: dict[int, float] = {}
                    st.im_w(a, c, 1.0, hi_row)
                    st.re_w(a, c, -math.tan(th_hi), hi_row)
                    st.add_row(f"rt-ang@{b.bus_id}", hi_row, 0.0, slack=+1)
                    lo_row: dict[int, float] = {}
                    st.im_w(a, c, 1.0, lo_row)
                    st.re_w(a, c, -math.tan(th_lo), lo_row)
                    st.add_row(f"rt-ang@{b.bus_id}", lo_row, 0.0, slack=-1)
                # secant support: Re W_ac >= g_a g_c cos(th_max) W_i
                th_max = max(abs(th_lo), abs(th_hi))
                sec: dict[int, float] = {}
                st.re_w(a, c, 1.0, sec)
                sec[wcol] = -lim_a.gamma_min * lim_c.gamma_min * math.cos(th_max)
                st.add_row(f"rt-sec@{b.bus_id}", sec, 0.0, slack=-1)

    # -- stability cuts ---------------------------------------------------------
    for k, cut in enumerate(cuts):
        if len(cut.phi) != ng:
            raise ValueError(f"cut {k} references {len(cut.phi)} generators, case has {ng}")
        row = {st.col_p(gi): float(cut.phi[gi]) for gi in range(ng) if cut.phi[gi] != 0.0}
        rhs = float(np.dot(cut.phi, cut.base_pgen_pu) - cut.eta0)
        st.add_row(f"cut#{k}", row, rhs, slack=-1)

    # -- boxes ---------------------------------------------------------------
    w_lo = np.array([b.vmin ** 2 for b in case.buses])
    w_hi = np.array([b.vmax ** 2 for b in case.buses])

    if interval is not None and case.wind_farms:
        fore = np.array([w.p_forecast for w in case.wind_farms])
        d_lo = float((fore - np.asarray(interval.upper)).sum()) / base
        d_hi = float((fore - np.asarray(interval.lower)).sum()) / base
    else:
        d_lo = d_hi = 0.0
    p_lo = np.array([g.p_min / base for g in case.generators]) - rho * d_lo
    p_hi = np.array([g.p_max / base for g in case.generators]) - rho * d_hi
    if np.any(p_lo > p_hi):
        raise ValueError(
            "compensation interval is wider than a generator's dispatch box"
        )
    q_lo = np.array([g.q_min / base for g in case.generators])
    q_hi = np.array([g.q_max / base for g in case.generators])
    s_lo = np.zeros(st.n_slack)
    s_hi = np.full(st.n_slack, np.inf)

    blocks = (
        PsdBlock(st.dim),
        BoxBlock(
            lo=np.concatenate([w_lo, p_lo, q_lo, s_lo]),
            hi=np.concatenate([w_hi, p_hi, q_hi, s_hi]),
        ),
    )

    n_var = st.off_s + st.n_slack
    p_diag = np.zeros(n_var)
    q_cost = np.zeros(n_var)
    for gi, g in enumerate(case.generators):
        p_diag[st.col_p(gi)] = 2.0 * g.c2 * base * base
        q_cost[st.col_p(gi)] = g.c1 * base

    if penalty == "loss":
        pen: dict[int, float] = {}
        for a in range(st.nt):
            st.flow_terms(a, 1.0, 1.0, pen)
        for col, coeff in pen.items():
            q_cost[col] += penalty_weight * base * coeff
    elif penalty == "qgen":
        for gi in range(ng):
            q_cost[st.col_q(gi)] += penalty_weight * base
    elif penalty != "none":
        raise ValueError(f"unknown penalty {penalty!r}")

    if completion_weight:
        coh: dict[int, float] = {}
        for a, c in floating_pairs:
            st.re_w(a, c, 1.0, coh)
        for col, coeff in coh.items():
            q_cost[col] -= completion_weight * base * coeff

    rows_ijv: list[tuple[int, int, float]] = []
    for r, row in enumerate(st.rows):
        for c, v in row.items():
            rows_ijv.append((r, c, v))
    data = np.array([v for _, _, v in rows_ijv])
    ii = np.array([r for r, _, _ in rows_ijv])
    jj = np.array([c for _, c, _ in rows_ijv])
    A = sp.coo_matrix((data, (ii, jj)), shape=(len(st.rows), n_var)).tocsc()

    program = ConeProgram(blocks, p_diag, q_cost, A, np.array(st.rhs))

    horizon = interval.horizon if interval is not None else "short_term"
    rec_interval = interval
    if rec_interval is None:
        rec_interval = PredictionInterval(
            horizon="short_term",
            lower=tuple(w.p_forecast for w in case.wind_farms),
            upper=tuple(w.p_forecast for w in case.wind_farms),
        )
    recourse = expected_cost_coeff(case, rec_interval)
    obj_const = float(sum(g.c0 for g in case.generators)) + float(
        np.dot(recourse.c2_prime, rho * rho)
    )

    return SdpModel(
        program=program,
        case=case,
        terminals=tmap,
        row_tags=tuple(st.tags),
        obj_const=obj_const,
        recourse=recourse,
        rho=tuple(float(v) for v in rho),
        cuts=tuple(cuts),
        penalty=penalty,
        penalty_weight=penalty_weight,
        pfr_enabled=pfr_enabled,
        n_svec=st.n_svec,
        off_w=st.off_w,
        off_p=st.off_p,
        off_q=st.off_q,
        scenario_count=0 if scenarios is None else len(scenarios),
    )


# ---- recovery ---------------------------------------------------------------

EXACTNESS_THRESHOLD = 1e5


def complex_w(model: SdpModel, x: np.ndarray) -> np.ndarray:
    """J-averaged Hermitian W from the solved PSD block."""
    from .conic import smat

    X = smat(x[: model.n_svec], 2 * len(model.terminals))
    nt = len(model.terminals)
    A = 0.5 * (X[:nt, :nt] + X[nt:, nt:])
    B = 0.5 * (X[nt:, :nt] - X[:nt, nt:])
    W = A + 1j * B
    return 0.5 * (W + W.conj().T)


def recover_rank1(model: SdpModel, x: np.ndarray):
    """Leading eigenpair of W, rotated so the reference bus angle is zero.

    Returns (v_term, gamma, v_bus, ratio, residual, exact).
    """
    case = model.case
    tmap = model.terminals
    W = complex_w(model, x)
    evals, evecs = np.linalg.eigh(W)
    lam1 = float(evals[-1])
    lam2 = float(evals[-2]) if len(evals) > 1 else 0.0
    ratio = lam1 / max(lam2, 1e-300) if lam1 > 0 else 0.0
    v = evecs[:, -1] * math.sqrt(max(lam1, 0.0))

    def ref_terminal(bus_id: int) -> int:
        terms = tmap.at_bus(bus_id)
        for a in terms:
            lid, _ = tmap.describe(a)
            if not (model.pfr_enabled and case.line(lid).pfr.active):
                return a
        return terms[0]

    t_ref = ref_terminal(case.slack_bus)
    ph = np.angle(v[t_ref]) if abs(v[t_ref]) > 0 else 0.0
    v = v * np.exp(-1j * ph)

    w_bus = x[model.off_w: model.off_w + case.n_bus]
    v_bus = np.zeros(case.n_bus, dtype=complex)
    for k, b in enumerate(case.buses):
        a = ref_terminal(b.bus_id)
        ang = np.angle(v[a]) if abs(v[a]) > 0 else 0.0
        v_bus[k] = math.sqrt(max(float(w_bus[k]), 0.0)) * np.exp(1j * ang)

    gamma = np.ones(len(tmap), dtype=complex)
    for a in range(len(tmap)):
        k = case.bus_position(tmap.bus_of(a))
        if abs(v_bus[k]) > 1e-9:
            gamma[a] = v[a] / v_bus[k]

    residual = float(
        np.linalg.norm(W - np.outer(v, v.conj())) / max(1.0, np.linalg.norm(W))
    )
    exact = ratio >= EXACTNESS_THRESHOLD
    return v, gamma, v_bus, ratio, residual, exact


def solve(
    model: SdpModel,
    tol: float = 1e-6,
    max_iter: int = 50_000,
    trace_path=None,
) -> DispatchSolution:
    """Solve the relaxation and recover dispatch + router settings."""
    sol = solve_admm(model.program, tol=tol, max_iter=max_iter, trace_path=trace_path)
    case = model.case
    base = case.base_mva
    ng = len(case.generators)
    x = sol.x

    p_pu = x[model.off_p: model.off_p + ng]
    q_pu = x[model.off_q: model.off_q + ng]
    v, gamma, v_bus, ratio, resid, exact = recover_rank1(model, x)

    obj = (
        float(
            sum(
                g.c2 * (p_pu[i] * base) ** 2 + g.c1 * (p_pu[i] * base)
                for i, g in enumerate(case.generators)
            )
        )
        + model.obj_const
    )

    tmap = model.terminals
    return DispatchSolution(
        case_name=case.name,
        p_gen_mw=tuple(float(v_) * base for v_ in p_pu),
        q_gen_mvar=tuple(float(v_) * base for v_ in q_pu),
        rho=model.rho,
        gamma=tuple(complex(g) for g in gamma),
        terminal_lines=tuple(tmap.describe(k) for k in range(len(tmap))),
        v_bus=tuple(complex(u) for u in v_bus),
        bus_ids=tuple(b.bus_id for b in case.buses),
        gen_buses=tuple(g.bus for g in case.generators),
        base_mva=base,
        objective=obj,
        exactness_ratio=float(ratio),
        recovery_residual=resid,
        exact=bool(exact),
        solver=sol.status,
    )


# ---- dispatch evaluation ------------------------------------------------------


@dataclass(frozen=True)
class CompensatedDispatch:
    p_prime_mw: tuple[float, ...]
    violations: tuple[str, ...]

    @property
    def feasible(self) -> bool:
        return not self.violations


def evaluate_dispatch(
    case: NetworkCase,
    dispatch: DispatchSolution,
    scenario_mw,
    tol_mw: float = 1e-6,
) -> CompensatedDispatch:
    """Participation-compensated outputs for one realization, checked against
    the physical dispatch boxes. Violations are reported, never raised."""
    scenario_mw = np.asarray(scenario_mw, dtype=float)
    forecast = np.array([w.p_forecast for w in case.wind_farms])
    shortfall = float((forecast - scenario_mw).sum()) if scenario_mw.size else 0.0
    p_prime = np.asarray(dispatch.p_gen_mw) + np.asarray(dispatch.rho) * shortfall
    viol = []
    for g, p in zip(case.generators, p_prime):
        if p < g.p_min - tol_mw:
            viol.append(
                f"generator at bus {g.bus}: compensated {p:.3f} MW below minimum {g.p_min}"
            )
        if p > g.p_max + tol_mw:
            viol.append(
                f"generator at bus {g.bus}: compensated {p:.3f} MW above maximum {g.p_max}"
            )
    return CompensatedDispatch(
        p_prime_mw=tuple(float(v) for v in p_prime), violations=tuple(viol)
    )


def objective_value(
    case: NetworkCase, p_gen_mw, recourse: RecourseCost, rho
) -> float:
    """Fuel cost plus recourse pricing, $/h."""
    p = np.asarray(p_gen_mw, dtype=float)
    rho = np.asarray(rho, dtype=float)
    total = 0.0
    for i, g in enumerate(case.generators):
        total += g.c2 * p[i] ** 2 + g.c1 * p[i] + g.c0
    total += float(np.dot(recourse.c2_prime, rho * rho))
    return float(total)
