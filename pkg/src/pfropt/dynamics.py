"""Classical multi-machine time-domain simulation through a fault sequence.

Machines are constant EMF behind transient reactance; loads convert to
constant impedance at their initialized voltages and are folded into the
network; wind keeps constant power at the scenario value, so wind buses stay
retained alongside machine internal nodes and each derivative evaluation
solves a small fixed point for their voltages. Integration is fixed-step RK4
with event times snapped to the grid.

State is (delta, omega) per machine: rotor angle in radians, speed deviation
in rad/s. 2H/omega_s * d(omega)/dt = Pm - Pe - D*omega/omega_s.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .admittance import (
    AdmittanceMatrix,
    apply_fault,
    apply_line_trip,
    build_admittance,
    kron_reduce,
)
from .network import NetworkCase
from .powerflow import PowerFlowError, net_injections, solve_power_flow

# process-local count of completed simulations; the online dispatch path
# asserts it does not move
_TDS_RUNS = 0


def tds_run_count() -> int:
    return _TDS_RUNS


def reset_tds_counter() -> None:
    global _TDS_RUNS
    _TDS_RUNS = 0


@dataclass(frozen=True)
class FaultEvent:
    """Bolted fault at a bus, cleared by tripping a line (or self-clearing)."""

    fault_bus: int
    t0: float
    t_cl: float
    trip_line: int | None = None

    def __post_init__(self):
        if self.t_cl < self.t0:
            raise ValueError("clearing time precedes fault start")

    def with_clearing(self, t_cl: float) -> "FaultEvent":
        return FaultEvent(self.fault_bus, self.t0, t_cl, self.trip_line)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 5.0
    model_order: str = "classical"
    guard_spread: float = 2.0 * math.pi  # abort + flag when exceeded
    stable_spread: float = math.pi       # classification threshold
    cp_voltage_floor: float = 0.4        # wind constant-power fallback

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.model_order != "classical":
            raise ValueError(
                f"model order {self.model_order!r} not available (classical only)"
            )


@dataclass
class Trajectory:
    t: np.ndarray        # (K,)
    delta: np.ndarray    # (K, m) rad
    omega: np.ndarray    # (K, m) rad/s deviation
    pe: np.ndarray       # (K, m) p.u.
    pm: np.ndarray       # (m,)
    machine_buses: tuple[int, ...]
    inertia: np.ndarray  # (m,) H in s
    omega_s: float
    dt: float
    t0: float            # snapped
    t_cl: float          # snapped
    guard_tripped: bool = False

    @property
    def n_machines(self) -> int:
        return len(self.machine_buses)

    def spread(self) -> np.ndarray:
        """Max pairwise rotor-angle separation per step."""
        return self.delta.max(axis=1) - self.delta.min(axis=1)

    def index_at(self, t: float) -> int:
        return int(round(t / self.dt))


@dataclass(frozen=True)
class Classification:
    stable: bool
    t_u: float | None      # first threshold crossing when unstable
    max_spread: float


def classify_stability(traj: Trajectory, threshold: float | None = None) -> Classification:
    thr = math.pi if threshold is None else threshold
    spread = traj.spread()
    over = np.nonzero(spread > thr)[0]
    if over.size:
        return Classification(False, float(traj.t[over[0]]), float(spread.max()))
    if traj.guard_tripped:
        # blown up before crossing the classification threshold
        return Classification(False, float(traj.t[-1]), float(spread.max()))
    return Classification(True, None, float(spread.max()))


# ---- reduced-network assembly -------------------------------------------


@dataclass
class _PhaseNet:
    """Machine/wind partition of one Kron-reduced operating network."""

    Y_mm: np.ndarray
    Y_mw: np.ndarray
    Y_wm: np.ndarray
    Y_ww_inv: np.ndarray | None  # inverse of the wind block (tiny, dense)
    wind_present: np.ndarray     # bool per wind farm (False: bus grounded)
    s_wind: np.ndarray           # complex p.u. injection per present farm


class TdsError(RuntimeError):
    pass


def _reduce_phase(
    adm: AdmittanceMatrix,
    machine_buses: list[int],
    y_machine: np.ndarray,
    load_y: dict[int, complex],
    wind_buses: list[int],
    s_wind: np.ndarray,
) -> _PhaseNet:
    """Augment with machine internal nodes, fold loads, reduce, partition."""
    case = adm.case
    n = case.n_bus
    m = len(machine_buses)
    grounded_pos = {case.bus_position(b) for b in adm.grounded}

    alive = [k for k in range(n) if k not in grounded_pos]
    pos_alive = {k: j for j, k in enumerate(alive)}
    na = len(alive)
    Y = np.zeros((na + m, na + m), dtype=complex)
    Y[:na, :na] = adm.Y[np.ix_(alive, alive)]
    for bus, y in load_y.items():
        k = case.bus_position(bus)
        if k in pos_alive:
            Y[pos_alive[k], pos_alive[k]] += y
    for i, bus in enumerate(machine_buses):
        k = case.bus_position(bus)
        node = na + i
        Y[node, node] += y_machine[i]
        if k in pos_alive:
            j = pos_alive[k]
            Y[node, j] -= y_machine[i]
            Y[j, node] -= y_machine[i]
            Y[j, j] += y_machine[i]
        # machine whose terminal bus is grounded: EMF works into the fault
        # through x'd alone; the internal node keeps only its own admittance

    wind_present = np.array(
        [case.bus_position(b) in pos_alive for b in wind_buses], dtype=bool
    )
    keep = [na + i for i in range(m)]
    wind_nodes = [
        pos_alive[case.bus_position(b)]
        for b, ok in zip(wind_buses, wind_present)
        if ok
    ]
    keep_all = np.array(keep + wind_nodes, dtype=int)
    Yred = kron_reduce(Y, keep_all)

    w = len(wind_nodes)
    Y_mm = Yred[:m, :m]
    Y_mw = Yred[:m, m:]
    Y_wm = Yred[m:, :m]
    Y_ww_inv = np.linalg.inv(Yred[m:, m:]) if w else None
    return _PhaseNet(
        Y_mm=Y_mm,
        Y_mw=Y_mw,
        Y_wm=Y_wm,
        Y_ww_inv=Y_ww_inv,
        wind_present=wind_present,
        s_wind=s_wind[wind_present] if w else np.zeros(0, dtype=complex),
    )


def _wind_voltages(
    net: _PhaseNet, E: np.ndarray, v_start: np.ndarray, floor: float
) -> np.ndarray:
    """Fixed point for constant-power wind nodes; impedance below the floor."""
    if net.Y_ww_inv is None or net.s_wind.size == 0:
        return np.zeros(0, dtype=complex)
    rhs0 = net.Y_wm @ E
    v = v_start.copy()
    s = net.s_wind
    for _ in range(60):
        vm = np.abs(v)
        scale = np.maximum(vm, floor)
        i_inj = np.conj(s) * v / (scale * scale)
        v_new = net.Y_ww_inv @ (i_inj - rhs0)
        if np.max(np.abs(v_new - v)) < 1e-12:
            return v_new
        v = v_new
    raise TdsError("wind-bus voltage fixed point did not converge")


def _electrical_power(
    net: _PhaseNet, E: np.ndarray, v_wind_cache: np.ndarray, floor: float
) -> tuple[np.ndarray, np.ndarray]:
    if net.s_wind.size:
        v_w = _wind_voltages(net, E, v_wind_cache, floor)
        i_m = net.Y_mm @ E + net.Y_mw @ v_w
    else:
        v_w = v_wind_cache
        i_m = net.Y_mm @ E
    return np.real(E * np.conj(i_m)), v_w


# ---- initialization -------------------------------------------------------


@dataclass
class EquilibriumInit:
    """Steady state at t0-: EMFs, angles, mechanical powers, phase networks."""

    e_mag: np.ndarray
    delta0: np.ndarray
    pm: np.ndarray
    v_bus: np.ndarray
    nets: dict[str, _PhaseNet]   # "pre", "fault", "post"
    machine_buses: tuple[int, ...]
    inertia: np.ndarray
    damping: np.ndarray
    omega_s: float
    v_wind0: np.ndarray


def _compensated_pgen(case: NetworkCase, dispatch, scenario_mw: np.ndarray) -> np.ndarray:
    """Participation-factor response to the wind shortfall, p.u. per machine."""
    p = np.asarray(dispatch.p_gen_pu, dtype=float).copy()
    if case.wind_farms:
        forecast = np.array([w.p_forecast for w in case.wind_farms])
        shortfall_pu = (forecast - np.asarray(scenario_mw)).sum() / case.base_mva
        p = p + np.asarray(dispatch.rho) * shortfall_pu
    return p


def initialize_equilibrium(
    case: NetworkCase,
    dispatch,
    scenario_mw: np.ndarray | None = None,
    fault: FaultEvent | None = None,
    config: SimConfig | None = None,
) -> EquilibriumInit:
    """Power-flow initialization of the classical model at the compensated
    dispatch; also assembles the pre/fault/post reduced networks.

    :param dispatch: needs p_gen_pu, rho, v_setpoint (per gen bus) and gamma
        terminal ratios (see DispatchSolution).
    :param scenario_mw: realized wind per farm (MW); defaults to forecast.
    """
    config = config or SimConfig()
    machine_buses = [g.bus for g in case.generators]
    if len(set(machine_buses)) != len(machine_buses):
        raise TdsError("dynamic model needs at most one generator per bus")

    if scenario_mw is None:
        scenario_mw = np.array([w.p_forecast for w in case.wind_farms])
    scenario_mw = np.asarray(scenario_mw, dtype=float)

    adm = build_admittance(case, dispatch.gamma_map())
    p_gen = _compensated_pgen(case, dispatch, scenario_mw)

    # wind enters the power flow as fixed injection, and the transient model
    # as retained constant-power node; both use the scenario value
    wind_pu = scenario_mw / case.base_mva
    p_spec, q_spec = net_injections(case, p_gen, wind_pu)
    v_set = dict(dispatch.v_setpoint)
    pf = solve_power_flow(adm, p_spec, q_spec, v_set, case.slack_bus)
    if not pf.converged:
        raise PowerFlowError(
            f"initialization power flow diverged (mismatch {pf.mismatch:.2e})"
        )

    v = pf.v
    # machine internal EMFs from terminal conditions
    m = len(case.generators)
    e = np.zeros(m, dtype=complex)
    y_machine = np.zeros(m, dtype=complex)
    wind_by_bus = {w.bus: k for k, w in enumerate(case.wind_farms)}
    for i, g in enumerate(case.generators):
        k = case.bus_position(g.bus)
        # net machine injection = total bus injection minus local load/wind parts
        s_bus = pf.s_injection[k]
        b = case.buses[k]
        s_load = complex(b.p_load, b.q_load) / case.base_mva
        s_machine = s_bus + s_load
        if g.bus in wind_by_bus:  # excluded by validation, kept defensive
            s_machine -= wind_pu[wind_by_bus[g.bus]]
        i_machine = np.conj(s_machine / v[k])
        e[i] = v[k] + 1j * g.xd_t * i_machine
        y_machine[i] = 1.0 / (1j * g.xd_t)

    # constant-impedance conversion of loads at initialized voltages
    load_y: dict[int, complex] = {}
    for b in case.buses:
        if b.p_load or b.q_load:
            k = case.bus_position(b.bus_id)
            s_l = complex(b.p_load, b.q_load) / case.base_mva
            load_y[b.bus_id] = np.conj(s_l) / (abs(v[k]) ** 2)

    wind_buses = [w.bus for w in case.wind_farms]
    s_wind = wind_pu.astype(complex)  # unity power factor

    def phase(a: AdmittanceMatrix) -> _PhaseNet:
        return _reduce_phase(a, machine_buses, y_machine, load_y, wind_buses, s_wind)

    nets = {"pre": phase(adm)}
    if fault is not None and fault.t_cl > fault.t0:
        nets["fault"] = phase(apply_fault(adm, fault.fault_bus))
        if fault.trip_line is not None:
            nets["post"] = phase(apply_line_trip(adm, fault.trip_line))
        else:
            nets["post"] = nets["pre"]
    else:
        nets["fault"] = nets["pre"]
        nets["post"] = nets["pre"]

    delta0 = np.angle(e)
    e_mag = np.abs(e)
    v_wind0 = np.array(
        [v[case.bus_position(b)] for b in wind_buses], dtype=complex
    )
    # mechanical power pinned to the reduced network's electrical power so the
    # initial derivative is exactly zero
    pm, _ = _electrical_power(
        nets["pre"], e, v_wind0[nets["pre"].wind_present], config.cp_voltage_floor
    )

    return EquilibriumInit(
        e_mag=e_mag,
        delta0=delta0,
        pm=pm,
        v_bus=v,
        nets=nets,
        machine_buses=tuple(machine_buses),
        inertia=np.array([g.inertia for g in case.generators]),
        damping=np.array([g.damping for g in case.generators]),
        omega_s=2.0 * math.pi * case.f_hz,
        v_wind0=v_wind0,
    )


# ---- integration ----------------------------------------------------------


def run_tds(
    case: NetworkCase,
    dispatch,
    scenario_mw: np.ndarray | None,
    fault: FaultEvent,
    config: SimConfig | None = None,
    init: EquilibriumInit | None = None,
) -> Trajectory:
    """Integrate the swing dynamics through the fault sequence.

    Event times snap to the step grid; a zero-length fault (t_cl == t0) runs
    the undisturbed system. Exceeding the spread guard stops integration and
    flags the trajectory.
    """
    global _TDS_RUNS
    config = config or SimConfig()
    if config.horizon <= fault.t_cl and fault.t_cl > fault.t0:
        raise ValueError("horizon must extend past the clearing time")
    if init is None:
        init = initialize_equilibrium(case, dispatch, scenario_mw, fault, config)

    dt = config.dt
    k0 = int(round(fault.t0 / dt))
    kcl = int(round(fault.t_cl / dt))
    n_steps = int(round(config.horizon / dt))
    m = len(init.machine_buses)

    M = 2.0 * init.inertia / init.omega_s  # p.u. power * s^2/rad
    D = init.damping
    omega_s = init.omega_s
    e_mag = init.e_mag
    pm = init.pm
    floor = config.cp_voltage_floor

    nets = init.nets
    v_wind_cache = {
        key: init.v_wind0[net.wind_present].copy() for key, net in nets.items()
    }

    t = np.empty(n_steps + 1)
    delta = np.empty((n_steps + 1, m))
    omega = np.empty((n_steps + 1, m))
    pe_series = np.empty((n_steps + 1, m))

    d = init.delta0.copy()
    w = np.zeros(m)
    guard = False

    def deriv(dd: np.ndarray, ww: np.ndarray, net: _PhaseNet, key: str):
        E = e_mag * np.exp(1j * dd)
        pe, v_w = _electrical_power(net, E, v_wind_cache[key], floor)
        if v_w.size:
            v_wind_cache[key] = v_w
        acc = (pm - pe - D * ww / omega_s) / M
        return ww, acc, pe

    def step_key(k: int) -> str:
        if kcl == k0 or k < k0:
            return "pre"
        return "fault" if k < kcl else "post"

    kk = 0
    for kk in range(n_steps + 1):
        key = step_key(kk)
        net = nets[key]
        dd1, dw1, pe_now = deriv(d, w, net, key)
        t[kk] = kk * dt
        delta[kk] = d
        omega[kk] = w
        pe_series[kk] = pe_now

        if d.max() - d.min() > config.guard_spread:
            guard = True
            break
        if kk == n_steps:
            break

        dd2, dw2, _ = deriv(d + 0.5 * dt * dd1, w + 0.5 * dt * dw1, net, key)
        dd3, dw3, _ = deriv(d + 0.5 * dt * dd2, w + 0.5 * dt * dw2, net, key)
        dd4, dw4, _ = deriv(d + dt * dd3, w + dt * dw3, net, key)
        d = d + dt / 6.0 * (dd1 + 2 * dd2 + 2 * dd3 + dd4)
        w = w + dt / 6.0 * (dw1 + 2 * dw2 + 2 * dw3 + dw4)

    last = kk + 1
    _TDS_RUNS += 1
    return Trajectory(
        t=t[:last],
        delta=delta[:last],
        omega=omega[:last],
        pe=pe_series[:last],
        pm=pm,
        machine_buses=init.machine_buses,
        inertia=init.inertia,
        omega_s=init.omega_s,
        dt=dt,
        t0=k0 * dt,
        t_cl=kcl * dt,
        guard_tripped=guard,
    )


# ---- trajectory I/O -------------------------------------------------------


def dump_trajectory_text(traj: Trajectory, path: str | Path) -> None:
    """Columnar export for plotting: t, then delta/omega/pe per machine."""
    cols = ["t"]
    for b in traj.machine_buses:
        cols += [f"delta_{b}", f"omega_{b}", f"pe_{b}"]
    lines = ["# " + " ".join(cols)]
    lines.append(f"# t0 {traj.t0!r} t_cl {traj.t_cl!r} guard {int(traj.guard_tripped)}")
    for k in range(len(traj.t)):
        row = [repr(float(traj.t[k]))]
        for i in range(traj.n_machines):
            row += [
                repr(float(traj.delta[k, i])),
                repr(float(traj.omega[k, i])),
                repr(float(traj.pe[k, i])),
            ]
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def save_trajectory(traj: Trajectory, path: str | Path) -> None:
    """Binary cache (npz) for the offline database."""
    meta = {
        "machine_buses": list(traj.machine_buses),
        "omega_s": traj.omega_s,
        "dt": traj.dt,
        "t0": traj.t0,
        "t_cl": traj.t_cl,
        "guard_tripped": traj.guard_tripped,
    }
    np.savez_compressed(
        path,
        t=traj.t,
        delta=traj.delta,
        omega=traj.omega,
        pe=traj.pe,
        pm=traj.pm,
        inertia=traj.inertia,
        meta=json.dumps(meta, sort_keys=True),
    )


def load_trajectory(path: str | Path) -> Trajectory:
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    return Trajectory(
        t=data["t"],
        delta=data["delta"],
        omega=data["omega"],
        pe=data["pe"],
        pm=data["pm"],
        machine_buses=tuple(meta["machine_buses"]),
        inertia=data["inertia"],
        omega_s=meta["omega_s"],
        dt=meta["dt"],
        t0=meta["t0"],
        t_cl=meta["t_cl"],
        guard_tripped=meta["guard_tripped"],
    )
