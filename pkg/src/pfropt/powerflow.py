"""Newton-Raphson power flow on the bus admittance matrix.

Router ratios make Y asymmetric, so the Jacobian is assembled from the full
complex derivative matrices rather than the polar shortcut formulas:

    S = diag(V) conj(Y V)
    dS/dtheta = j diag(V) conj(diag(I) - Y diag(V))
    dS/dvm    = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)

Those identities hold for arbitrary complex Y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admittance import AdmittanceMatrix
from .network import NetworkCase


@dataclass(frozen=True)
class PowerFlowResult:
    converged: bool
    iterations: int
    v: np.ndarray            # complex bus voltage, case bus order
    s_injection: np.ndarray  # complex net injection (p.u.) actually flowing
    mismatch: float


class PowerFlowError(RuntimeError):
    pass


def net_injections(
    case: NetworkCase,
    p_gen_pu: np.ndarray,
    wind_pu: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Specified net P, Q per bus (p.u.): generation + wind - load.

    :param p_gen_pu: active output per generator, case generator order.
    :param wind_pu: realized output per wind farm, case farm order
        (defaults to the forecast).
    """
    n = case.n_bus
    p = np.zeros(n)
    q = np.zeros(n)
    for b in case.buses:
        k = case.bus_position(b.bus_id)
        p[k] -= b.p_load / case.base_mva
        q[k] -= b.q_load / case.base_mva
    for g, pg in zip(case.generators, p_gen_pu):
        p[case.bus_position(g.bus)] += pg
    if wind_pu is None:
        wind_pu = np.array([w.p_forecast / case.base_mva for w in case.wind_farms])
    for w, pw in zip(case.wind_farms, wind_pu):
        p[case.bus_position(w.bus)] += pw
    return p, q


def solve_power_flow(
    adm: AdmittanceMatrix,
    p_spec: np.ndarray,
    q_spec: np.ndarray,
    v_setpoints: dict[int, float],
    slack_bus: int,
    tol: float = 1e-10,
    max_iter: int = 40,
) -> PowerFlowResult:
    """Solve for bus voltages given injections and magnitude setpoints.

    Buses in ``v_setpoints`` (other than the slack) are PV; the rest PQ.
    The slack bus needs a setpoint and holds angle zero.
    """
    case = adm.case
    Y = adm.Y
    n = case.n_bus
    if slack_bus not in v_setpoints:
        raise PowerFlowError(f"slack bus {slack_bus} has no voltage setpoint")

    sl = case.bus_position(slack_bus)
    pv = np.array(
        sorted(
            case.bus_position(b) for b in v_setpoints if b != slack_bus
        ),
        dtype=int,
    )
    pq = np.array(
        [k for k in range(n) if k != sl and k not in set(pv)], dtype=int
    )
    pvpq = np.concatenate([pv, pq]).astype(int)

    v = np.ones(n, dtype=complex)
    for b, mag in v_setpoints.items():
        v[case.bus_position(b)] = mag
    s_spec = p_spec + 1j * q_spec

    it = 0
    mis = np.inf
    for it in range(1, max_iter + 1):
        i_bus = Y @ v
        s = v * np.conj(i_bus)
        dp = np.real(s - s_spec)[pvpq]
        dq = np.imag(s - s_spec)[pq]
        f = np.concatenate([dp, dq])
        mis = float(np.max(np.abs(f))) if f.size else 0.0
        if mis < tol:
            return PowerFlowResult(True, it - 1, v, s, mis)

        vnorm = v / np.abs(v)
        dS_dVa = 1j * np.diag(v) @ np.conj(np.diag(i_bus) - Y @ np.diag(v))
        dS_dVm = np.diag(v) @ np.conj(Y @ np.diag(vnorm)) + np.conj(
            np.diag(i_bus)
        ) @ np.diag(vnorm)

        J11 = np.real(dS_dVa[np.ix_(pvpq, pvpq)])
        J12 = np.real(dS_dVm[np.ix_(pvpq, pq)])
        J21 = np.imag(dS_dVa[np.ix_(pq, pvpq)])
        J22 = np.imag(dS_dVm[np.ix_(pq, pq)])
        J = np.block([[J11, J12], [J21, J22]])
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError("singular power flow Jacobian") from exc

        k = pvpq.size
        ang = np.angle(v)
        mag = np.abs(v)
        ang[pvpq] += dx[:k]
        mag[pq] += dx[k:]
        v = mag * np.exp(1j * ang)

    return PowerFlowResult(False, it, v, v * np.conj(Y @ v), mis)
