"""Bus admittance construction with router-scaled terminals, plus network surgery.

A series router on a line makes each terminal voltage a complex multiple of
its bus voltage, V_term = gamma * V_bus. Stamping the pi-model through those
ratios gives, for a line f--t with series y_s and per-end shunt y_e:

    Y[f,f] += |g_f|^2 (y_s + y_e)      Y[f,t] += -conj(g_f) g_t y_s
    Y[t,t] += |g_t|^2 (y_s + y_e)      Y[t,f] += -conj(g_t) g_f y_s

so Y is asymmetric whenever the two ratios differ. gamma = 1 on both ends
recovers the ordinary symmetric build.

Faults are bolted: the faulted bus is forced to zero voltage, implemented by
deleting its row/column before any reduction. Line trips unstamp the line.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .network import NetworkCase, PfrLimits


class TerminalMap:
    """Bijection between directed branch ends and indices 0..2E-1.

    Terminal ``2k`` is the from-side of the k-th line in case order,
    ``2k + 1`` its to-side.
    """

    def __init__(self, case: NetworkCase):
        self._case = case
        ends = []
        for ln in case.lines:
            ends.append((ln.line_id, 0, ln.from_bus))
            ends.append((ln.line_id, 1, ln.to_bus))
        self._ends = tuple(ends)
        self._index = {(lid, end): k for k, (lid, end, _) in enumerate(ends)}
        at_bus: dict[int, list[int]] = {b.bus_id: [] for b in case.buses}
        for k, (_, _, bus) in enumerate(ends):
            at_bus[bus].append(k)
        self._at_bus = {b: tuple(v) for b, v in at_bus.items()}

    def __len__(self) -> int:
        return len(self._ends)

    def index(self, line_id: int, end: int) -> int:
        return self._index[(line_id, end)]

    def describe(self, idx: int) -> tuple[int, int]:
        lid, end, _ = self._ends[idx]
        return lid, end

    def bus_of(self, idx: int) -> int:
        return self._ends[idx][2]

    def at_bus(self, bus_id: int) -> tuple[int, ...]:
        return self._at_bus[bus_id]

    def limits_of(self, idx: int) -> PfrLimits:
        lid, _, _ = self._ends[idx]
        return self._case.line(lid).pfr

    def other_end(self, idx: int) -> int:
        return idx ^ 1  # ends of one line are adjacent pairs


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Bus-level Y plus the terminal bookkeeping needed to rebuild variants.

    ``gamma`` holds one complex ratio per terminal index. ``grounded`` buses
    are held at zero voltage (bolted fault); ``tripped`` lines have had their
    stamps removed from Y.
    """

    case: NetworkCase
    Y: np.ndarray
    terminals: TerminalMap
    gamma: tuple[complex, ...]
    grounded: frozenset[int] = frozenset()
    tripped: frozenset[int] = frozenset()

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AdmittanceMatrix)
            and self.case is other.case
            and np.array_equal(self.Y, other.Y)
            and self.gamma == other.gamma
            and self.grounded == other.grounded
            and self.tripped == other.tripped
        )

    def gamma_at(self, line_id: int, end: int) -> complex:
        return self.gamma[self.terminals.index(line_id, end)]


def _line_stamps(line, g_f: complex, g_t: complex):
    """Four dense stamps of one line through its terminal ratios."""
    y_s = line.y_series
    y_tot = y_s + line.y_shunt_end
    return (
        abs(g_f) ** 2 * y_tot,          # (f, f)
        -np.conj(g_f) * g_t * y_s,      # (f, t)
        -np.conj(g_t) * g_f * y_s,      # (t, f)
        abs(g_t) ** 2 * y_tot,          # (t, t)
    )


def build_admittance(
    case: NetworkCase, gamma: dict[tuple[int, int], complex] | None = None
) -> AdmittanceMatrix:
    """Assemble bus Y for the intact network.

    :param gamma: optional terminal ratios keyed by (line_id, end);
        unlisted terminals default to 1 (no router, or router at neutral).
    """
    tmap = TerminalMap(case)
    ratios = [1.0 + 0.0j] * len(tmap)
    if gamma:
        for (lid, end), g in gamma.items():
            ratios[tmap.index(lid, end)] = complex(g)

    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for ln in case.lines:
        f = case.bus_position(ln.from_bus)
        t = case.bus_position(ln.to_bus)
        g_f = ratios[tmap.index(ln.line_id, 0)]
        g_t = ratios[tmap.index(ln.line_id, 1)]
        s_ff, s_ft, s_tf, s_tt = _line_stamps(ln, g_f, g_t)
        Y[f, f] += s_ff
        Y[f, t] += s_ft
        Y[t, f] += s_tf
        Y[t, t] += s_tt
    return AdmittanceMatrix(
        case=case, Y=Y, terminals=tmap, gamma=tuple(ratios)
    )


def apply_fault(adm: AdmittanceMatrix, bus: int) -> AdmittanceMatrix:
    """Bolted three-phase fault at a bus; the matrix itself is untouched."""
    if bus not in adm.case._bus_pos:
        raise KeyError(f"no bus {bus}")
    return replace(adm, grounded=adm.grounded | {bus})


def remove_fault(adm: AdmittanceMatrix, bus: int) -> AdmittanceMatrix:
    return replace(adm, grounded=adm.grounded - {bus})


def apply_line_trip(adm: AdmittanceMatrix, line_id: int) -> AdmittanceMatrix:
    """Remove one line's stamps. Raises if the trip would island the grid."""
    if line_id in adm.tripped:
        raise ValueError(f"line {line_id} already tripped")
    case = adm.case
    ln = case.line(line_id)

    remaining = [
        l for l in case.lines
        if l.line_id != line_id and l.line_id not in adm.tripped
    ]
    from .network import _connected

    if not _connected({b.bus_id for b in case.buses}, remaining):
        raise ValueError(f"tripping line {line_id} islands the network")

    f = case.bus_position(ln.from_bus)
    t = case.bus_position(ln.to_bus)
    g_f = adm.gamma_at(line_id, 0)
    g_t = adm.gamma_at(line_id, 1)
    s_ff, s_ft, s_tf, s_tt = _line_stamps(ln, g_f, g_t)
    Y = adm.Y.copy()
    Y[f, f] -= s_ff
    Y[f, t] -= s_ft
    Y[t, f] -= s_tf
    Y[t, t] -= s_tt
    return replace(adm, Y=Y, tripped=adm.tripped | {line_id})


def restore_line(adm: AdmittanceMatrix, line_id: int) -> AdmittanceMatrix:
    """Stamp a previously tripped line back in; inverse of apply_line_trip."""
    if line_id not in adm.tripped:
        raise ValueError(f"line {line_id} is not tripped")
    case = adm.case
    ln = case.line(line_id)
    f = case.bus_position(ln.from_bus)
    t = case.bus_position(ln.to_bus)
    s_ff, s_ft, s_tf, s_tt = _line_stamps(
        ln, adm.gamma_at(line_id, 0), adm.gamma_at(line_id, 1)
    )
    Y = adm.Y.copy()
    Y[f, f] += s_ff
    Y[f, t] += s_ft
    Y[t, f] += s_tf
    Y[t, t] += s_tt
    return replace(adm, Y=Y, tripped=adm.tripped - {line_id})


def kron_reduce(Y: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Eliminate all nodes outside ``keep`` by Schur complement.

    Order of the reduced matrix follows the order of ``keep``.
    """
    keep = np.asarray(keep, dtype=int)
    n = Y.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[keep] = False
    elim = np.nonzero(mask)[0]
    if elim.size == 0:
        return Y[np.ix_(keep, keep)].copy()
    Ykk = Y[np.ix_(keep, keep)]
    Yke = Y[np.ix_(keep, elim)]
    Yek = Y[np.ix_(elim, keep)]
    Yee = Y[np.ix_(elim, elim)]
    try:
        X = np.linalg.solve(Yee, Yek)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "network reduction hit a floating subnetwork (singular interior block)"
        ) from exc
    return Ykk - Yke @ X


def reduce_to_buses(adm: AdmittanceMatrix, keep_buses: list[int]) -> np.ndarray:
    """Kron-reduce the bus matrix to a set of buses, honouring grounded buses.

    Grounded buses are deleted outright (their voltage is zero, they absorb
    everything stamped into them); a grounded bus cannot be kept.
    """
    case = adm.case
    for b in keep_buses:
        if b in adm.grounded:
            raise ValueError(f"bus {b} is faulted, cannot keep it in the reduction")
    alive = [k for k, b in enumerate(case.buses) if b.bus_id not in adm.grounded]
    Y = adm.Y[np.ix_(alive, alive)]
    pos_in_alive = {case.buses[k].bus_id: j for j, k in enumerate(alive)}
    keep = np.array([pos_in_alive[b] for b in keep_buses], dtype=int)
    return kron_reduce(Y, keep)
