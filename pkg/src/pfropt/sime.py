"""Single-machine equivalent analysis of multi-machine swing trajectories.

The machines split into a critical and a non-critical group at the largest
rotor-angle gap; inertia-weighted aggregation of the two groups gives the
one-machine equivalent whose margin is an energy balance:

  unstable: minus the residual kinetic energy where P_a returns to zero while
            the equivalent still accelerates forward;
  stable:   the deceleration reserve between the return angle and the
            post-fault unstable equilibrium, the latter located on a
            sinusoid fitted to the post-fault P_e(delta) samples.

Sensitivities of the margin to machine dispatch come from compensated central
finite differences (two extra simulations per machine) and feed linear
dispatch cuts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    Classification,
    EquilibriumInit,
    FaultEvent,
    SimConfig,
    Trajectory,
    classify_stability,
    initialize_equilibrium,
    run_tds,
)
from .network import NetworkCase


@dataclass(frozen=True)
class MachineGrouping:
    critical: tuple[int, ...]      # machine bus ids
    non_critical: tuple[int, ...]

    def __post_init__(self):
        if not self.critical or not self.non_critical:
            raise ValueError("grouping must be a nonempty proper split")
        if set(self.critical) & set(self.non_critical):
            raise ValueError("groups overlap")


@dataclass
class OmibTrajectory:
    t: np.ndarray
    delta: np.ndarray      # rad
    omega: np.ndarray      # rad/s
    pe: np.ndarray         # p.u.
    pm: float              # p.u., constant
    M: float               # equivalent inertia coefficient (p.u. s^2/rad)
    t_cl: float
    dt: float
    grouping: MachineGrouping
    source_unstable_at: float | None  # spread-threshold crossing of the source

    @property
    def pa(self) -> np.ndarray:
        return self.pm - self.pe

    def index_at(self, t: float) -> int:
        return int(round(t / self.dt))


@dataclass(frozen=True)
class StabilityMargin:
    eta: float                     # OMIB energy units (p.u. * rad); nan if undecided
    classification: str            # "stable" | "unstable" | "marginal"
    delta_r: float | None = None   # return angle (stable)
    delta_u: float | None = None   # unstable equilibrium angle
    omega_u: float | None = None   # speed at the P_a zero crossing (unstable)
    saturated: bool = False        # stable with no post-fault equilibrium found

    @property
    def decided(self) -> bool:
        return self.classification != "marginal"


@dataclass(frozen=True)
class SensitivityVector:
    phi: tuple[float, ...]         # d eta / d P_G, per machine, margin per p.u.
    base_pgen_pu: tuple[float, ...]
    scenario_id: int
    contingency_id: int
    unreliable: tuple[bool, ...] = ()


@dataclass(frozen=True)
class TscConstraint:
    """Linear dispatch cut: sum_i phi_i (P_Gi - P_Gi^0) + eta0 >= 0 (p.u.)."""

    phi: tuple[float, ...]
    base_pgen_pu: tuple[float, ...]
    eta0: float
    contingency_id: int
    scenario_id: int

    def evaluate(self, p_gen_pu) -> float:
        p = np.asarray(p_gen_pu, dtype=float)
        return float(
            np.dot(self.phi, p - np.asarray(self.base_pgen_pu)) + self.eta0
        )


def build_constraint(
    phi: SensitivityVector, eta0: float
) -> TscConstraint:
    return TscConstraint(
        phi=phi.phi,
        base_pgen_pu=phi.base_pgen_pu,
        eta0=eta0,
        contingency_id=phi.contingency_id,
        scenario_id=phi.scenario_id,
    )


# ---- grouping and aggregation ---------------------------------------------


def identify_critical_machines(
    traj: Trajectory, classification: Classification | None = None
) -> MachineGrouping:
    """Split at the largest angular gap at the instability time (unstable)
    or at maximum spread (stable)."""
    cls = classification or classify_stability(traj)
    if cls.stable:
        k_ref = int(np.argmax(traj.spread()))
    else:
        k_ref = min(traj.index_at(cls.t_u), len(traj.t) - 1)
    ang = traj.delta[k_ref]
    if ang.max() - ang.min() < 1e-9:
        raise ValueError("degenerate trajectory: all rotor angles equal")
    order = np.argsort(-ang)  # descending
    sorted_ang = ang[order]
    gaps = sorted_ang[:-1] - sorted_ang[1:]
    cut = int(np.argmax(gaps))  # first largest gap
    adv = order[: cut + 1]
    rest = order[cut + 1:]
    buses = traj.machine_buses
    return MachineGrouping(
        critical=tuple(sorted(buses[i] for i in adv)),
        non_critical=tuple(sorted(buses[i] for i in rest)),
    )


def build_omib(traj: Trajectory, grouping: MachineGrouping) -> OmibTrajectory:
    """Inertia-weighted two-group aggregation of a trajectory."""
    pos = {b: i for i, b in enumerate(traj.machine_buses)}
    unknown = (set(grouping.critical) | set(grouping.non_critical)) - set(pos)
    if unknown:
        raise ValueError(f"grouping references unknown machines {sorted(unknown)}")
    ic = np.array([pos[b] for b in grouping.critical], dtype=int)
    ix = np.array([pos[b] for b in grouping.non_critical], dtype=int)

    M_i = 2.0 * traj.inertia / traj.omega_s
    Mc = float(M_i[ic].sum())
    Mn = float(M_i[ix].sum())
    if Mc <= 0 or Mn <= 0:
        raise ValueError("zero group inertia")
    M = Mc * Mn / (Mc + Mn)

    def coi(series, idx, Mg):
        return series[:, idx] @ M_i[idx] / Mg

    delta = coi(traj.delta, ic, Mc) - coi(traj.delta, ix, Mn)
    omega = coi(traj.omega, ic, Mc) - coi(traj.omega, ix, Mn)
    pe = M * (traj.pe[:, ic].sum(axis=1) / Mc - traj.pe[:, ix].sum(axis=1) / Mn)
    pm = M * (traj.pm[ic].sum() / Mc - traj.pm[ix].sum() / Mn)

    cls = classify_stability(traj)
    return OmibTrajectory(
        t=traj.t,
        delta=delta,
        omega=omega,
        pe=pe,
        pm=float(pm),
        M=M,
        t_cl=traj.t_cl,
        dt=traj.dt,
        grouping=grouping,
        source_unstable_at=cls.t_u,
    )


# ---- margin ----------------------------------------------------------------


def _sine_fit(delta: np.ndarray, pe: np.ndarray):
    """Least-squares Pe(d) = a + b sin d + c cos d."""
    A = np.column_stack([np.ones_like(delta), np.sin(delta), np.cos(delta)])
    coef, *_ = np.linalg.lstsq(A, pe, rcond=None)
    return coef  # (a, b, c)


def _decel_area(a, b, c, pm, d_from, d_to) -> float:
    """Integral of (Pe - Pm) d delta for the fitted sinusoid."""
    return float(
        (a - pm) * (d_to - d_from)
        - b * (math.cos(d_to) - math.cos(d_from))
        + c * (math.sin(d_to) - math.sin(d_from))
    )


def _unstable_scan(omib: OmibTrajectory, k_start: int) -> StabilityMargin | None:
    """Look for the forward P_a zero crossing with positive speed."""
    pa = omib.pa
    w = omib.omega
    for k in range(k_start + 1, len(omib.t)):
        if pa[k] > 0.0 and w[k] > 0.0 and pa[k - 1] <= 0.0:
            frac = pa[k - 1] / (pa[k - 1] - pa[k])
            w_u = w[k - 1] + frac * (w[k] - w[k - 1])
            d_u = omib.delta[k - 1] + frac * (omib.delta[k] - omib.delta[k - 1])
            if w_u <= 0.0:
                continue
            return StabilityMargin(
                eta=-0.5 * omib.M * w_u * w_u,
                classification="unstable",
                delta_u=float(d_u),
                omega_u=float(w_u),
            )
    return None


def compute_margin(omib: OmibTrajectory) -> StabilityMargin:
    """Energy margin of the one-machine equivalent (positive = stable)."""
    k_cl = min(omib.index_at(omib.t_cl), len(omib.t) - 1)
    pa = omib.pa
    w = omib.omega

    # first forward P_a zero crossing, and first speed reversal
    cross_k = None
    for k in range(k_cl + 1, len(omib.t)):
        if pa[k] > 0.0 and w[k] > 0.0 and pa[k - 1] <= 0.0:
            cross_k = k
            break
    k_ret = None
    for k in range(k_cl, len(omib.t)):
        if w[k] <= 0.0:
            k_ret = k
            break

    if cross_k is not None and (k_ret is None or cross_k <= k_ret):
        return _unstable_scan(omib, k_cl) or StabilityMargin(
            eta=float("nan"), classification="marginal"
        )

    if k_ret is None:
        if pa[k_cl] > 0.0 and w[k_cl] > 0.0 and bool(np.all(pa[k_cl:] > 0.0)):
            # deep instability: never decelerates after clearing
            w_u = w[k_cl]
            return StabilityMargin(
                eta=-0.5 * omib.M * w_u * w_u,
                classification="unstable",
                delta_u=float(omib.delta[k_cl]),
                omega_u=float(w_u),
            )
        if omib.source_unstable_at is not None:
            # spread blew up without a clean P_a crossing
            w_end = w[-1]
            return StabilityMargin(
                eta=-0.5 * omib.M * w_end * w_end,
                classification="unstable",
                delta_u=float(omib.delta[-1]),
                omega_u=float(w_end),
            )
        return StabilityMargin(eta=float("nan"), classification="marginal")

    # stable: deceleration reserve from the return angle to the unstable
    # equilibrium of the fitted post-fault Pe(delta)
    d_r = float(omib.delta[k_ret])
    hi = max(k_ret + 1, min(len(omib.t), k_cl + max(2 * (k_ret - k_cl), 50)))
    win = slice(k_cl, hi)
    dwin = omib.delta[win]
    if dwin.max() - dwin.min() < 1e-6:
        # equivalent barely moved: flat fit, report saturated reserve
        pe_mean = float(np.mean(omib.pe[win]))
        eta = (pe_mean - omib.pm) * math.pi
        return StabilityMargin(
            eta=eta, classification="stable" if eta >= 0 else "unstable",
            delta_r=d_r, saturated=True,
        )
    a, b, c = _sine_fit(dwin, omib.pe[win])
    R = math.hypot(b, c)
    phase = math.atan2(c, b)
    k_sin = (omib.pm - a) / R if R > 1e-12 else 2.0

    if abs(k_sin) > 1.0:
        # no post-fault equilibrium: integrate one half period forward
        eta = _decel_area(a, b, c, omib.pm, d_r, d_r + math.pi)
        return StabilityMargin(
            eta=eta,
            classification="stable" if eta >= 0 else "unstable",
            delta_r=d_r,
            saturated=True,
        )

    d_u = math.pi - math.asin(k_sin) - phase
    while d_u < d_r:
        d_u += 2.0 * math.pi
    while d_u - 2.0 * math.pi >= d_r:
        d_u -= 2.0 * math.pi
    eta = _decel_area(a, b, c, omib.pm, d_r, d_u)

    if omib.source_unstable_at is not None and eta > 0:
        # source machines separated later (multi-swing); rescan past return
        late = _unstable_scan(omib, k_ret)
        if late is not None:
            return late
        return StabilityMargin(eta=float("nan"), classification="marginal")

    return StabilityMargin(
        eta=float(eta),
        classification="stable" if eta >= 0 else "unstable",
        delta_r=d_r,
        delta_u=float(d_u),
    )


def margin_for(
    case: NetworkCase,
    dispatch,
    scenario_mw,
    fault: FaultEvent,
    config: SimConfig | None = None,
    grouping: MachineGrouping | None = None,
    init: EquilibriumInit | None = None,
) -> tuple[StabilityMargin, MachineGrouping, Trajectory]:
    """Simulate, group (unless fixed), aggregate, and score one contingency."""
    config = config or SimConfig()
    traj = run_tds(case, dispatch, scenario_mw, fault, config, init=init)
    if grouping is None:
        grouping = identify_critical_machines(traj)
    omib = build_omib(traj, grouping)
    return compute_margin(omib), grouping, traj


# ---- sensitivities ---------------------------------------------------------


def _perturbed_dispatch(dispatch, case: NetworkCase, gen_idx: int, dp_pu: float):
    """Shift one machine by dp; the slack machine absorbs the balance.

    The initialization power flow holds voltage and angle at the slack bus
    and lets its injection float, so only non-slack entries act on the
    dynamics. The explicit slack back-off keeps the dispatch sum honest for
    bookkeeping without changing the simulated trajectory.
    """
    p = np.asarray(dispatch.p_gen_pu, dtype=float).copy()
    slack_idx = next(
        i for i, g in enumerate(case.generators) if g.bus == case.slack_bus
    )
    p[gen_idx] += dp_pu
    p[slack_idx] -= dp_pu
    return dispatch.with_pgen(p)


def trajectory_sensitivity(
    case: NetworkCase,
    dispatch,
    scenario_mw,
    fault: FaultEvent,
    gen_bus: int,
    config: SimConfig | None = None,
    grouping: MachineGrouping | None = None,
    step_frac: float = 0.01,
) -> tuple[float, bool]:
    """Central-difference margin sensitivity for one machine (per p.u.).

    Returns (phi, unreliable). The slack machine gets an exact zero: its
    dispatch entry does not act on the dynamics (see _perturbed_dispatch).
    The grouping stays fixed across the stencil; a stable/unstable flip
    inside the stencil halves the step once, and a persistent flip marks
    the value unreliable.
    """
    config = config or SimConfig()
    if gen_bus == case.slack_bus:
        return 0.0, False
    gen_idx = next(
        i for i, g in enumerate(case.generators) if g.bus == gen_bus
    )
    if grouping is None:
        _, grouping, _ = margin_for(case, dispatch, scenario_mw, fault, config)

    gen = case.generators[gen_idx]
    dp = step_frac * gen.p_max / case.base_mva

    def stencil(dp_try: float):
        up = _perturbed_dispatch(dispatch, case, gen_idx, +dp_try)
        dn = _perturbed_dispatch(dispatch, case, gen_idx, -dp_try)
        m_up, _, _ = margin_for(case, up, scenario_mw, fault, config, grouping)
        m_dn, _, _ = margin_for(case, dn, scenario_mw, fault, config, grouping)
        return m_up, m_dn

    m_up, m_dn = stencil(dp)
    flip = (
        not m_up.decided
        or not m_dn.decided
        or m_up.classification != m_dn.classification
    )
    if flip:
        dp = dp / 2.0
        m_up, m_dn = stencil(dp)
        flip = (
            not m_up.decided
            or not m_dn.decided
            or m_up.classification != m_dn.classification
        )
    if not m_up.decided or not m_dn.decided:
        return 0.0, True
    phi = (m_up.eta - m_dn.eta) / (2.0 * dp)
    return float(phi), bool(flip)


def sensitivity_vector(
    case: NetworkCase,
    dispatch,
    scenario_mw,
    fault: FaultEvent,
    scenario_id: int,
    contingency_id: int,
    config: SimConfig | None = None,
    grouping: MachineGrouping | None = None,
    step_frac: float = 0.01,
) -> SensitivityVector:
    """Stack per-machine sensitivities at the compensated base point."""
    phis = []
    flags = []
    for g in case.generators:
        phi, bad = trajectory_sensitivity(
            case, dispatch, scenario_mw, fault, g.bus, config, grouping, step_frac
        )
        phis.append(phi)
        flags.append(bad)
    return SensitivityVector(
        phi=tuple(phis),
        base_pgen_pu=tuple(float(v) for v in dispatch.p_gen_pu),
        scenario_id=scenario_id,
        contingency_id=contingency_id,
        unreliable=tuple(flags),
    )


# ---- critical clearing time -------------------------------------------------


@dataclass(frozen=True)
class CctEstimate:
    cct: float
    points: tuple[tuple[float, float], ...]  # (t_cl, eta) samples
    refined: bool


def estimate_cct(
    case: NetworkCase,
    dispatch,
    scenario_mw,
    fault: FaultEvent,
    bracket: tuple[float, float],
    config: SimConfig | None = None,
    n_points: int = 4,
    residual_tol: float = 0.05,
) -> CctEstimate:
    """Root of the margin-vs-clearing-time curve inside the bracket.

    Margins are evaluated at ``n_points`` clearing times (linear fit near the
    zero crossing); one extra evaluation refines the root when the fit is
    poor. The initialization is shared across all clearing times.
    """
    config = config or SimConfig()
    t_lo, t_hi = bracket
    if not (0 <= t_lo < t_hi):
        raise ValueError("bad bracket")
    init = initialize_equilibrium(
        case, dispatch, scenario_mw, fault.with_clearing(t_hi), config
    )

    def margin_at(t_cl: float, grouping=None):
        m, grp, _ = margin_for(
            case, dispatch, scenario_mw, fault.with_clearing(t_cl),
            config, grouping, init=init,
        )
        if not m.decided:
            raise RuntimeError(
                f"margin undecided at t_cl={t_cl}; extend the horizon"
            )
        return m, grp

    m_hi, grouping = margin_at(t_hi)
    if m_hi.classification != "unstable":
        raise ValueError("bracket upper end is not unstable: no sign change")
    m_lo, _ = margin_at(t_lo, grouping)
    if m_lo.classification != "stable":
        raise ValueError("bracket lower end is not stable: no sign change")

    ts = np.linspace(t_lo, t_hi, n_points)
    etas = np.empty(n_points)
    etas[0] = m_lo.eta
    etas[-1] = m_hi.eta
    for i in range(1, n_points - 1):
        m, _ = margin_at(float(ts[i]), grouping)
        etas[i] = m.eta

    slope, intercept = np.polyfit(ts, etas, 1)
    points = [(float(a), float(b)) for a, b in zip(ts, etas)]
    if abs(slope) < 1e-12:
        raise RuntimeError("flat margin curve in bracket")
    root = -intercept / slope
    resid = float(np.max(np.abs(slope * ts + intercept - etas)))
    scale = float(np.max(np.abs(etas)))

    def crossing_pair(pts):
        pair = None
        for (ta, ea), (tb, eb) in zip(pts[:-1], pts[1:]):
            if ea >= 0.0 > eb or ea > 0.0 >= eb:
                pair = (ta, ea, tb, eb)
        if pair is None:
            raise RuntimeError("margin sign change lost during refinement")
        return pair

    refined = False
    if resid > residual_tol * scale or not (t_lo <= root <= t_hi):
        # curvature dominates the global fit: secant on the sign-change pair,
        # then one extra evaluation there and a final local secant
        refined = True
        ta, ea, tb, eb = crossing_pair(sorted(points))
        t_sec = ta + (tb - ta) * ea / (ea - eb)
        m_r, _ = margin_at(float(t_sec), grouping)
        points.append((float(t_sec), float(m_r.eta)))
        ta, ea, tb, eb = crossing_pair(sorted(points))
        root = ta + (tb - ta) * ea / (ea - eb)

    return CctEstimate(cct=float(root), points=tuple(points), refined=refined)
