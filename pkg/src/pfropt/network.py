"""Static network description: buses, lines, machines, wind farms, router limits.

Everything downstream (power flow, time-domain simulation, dispatch
optimization) consumes the immutable :class:`NetworkCase` built here. Loads,
limits and forecasts are stored in physical units (MW / MVAr) exactly as they
appear in case files; computational modules convert to per-unit on
``base_mva`` at their own boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Bus:
    """Single busbar with voltage band and aggregate load."""

    bus_id: int
    vmin: float = 0.95
    vmax: float = 1.05
    p_load: float = 0.0  # MW
    q_load: float = 0.0  # MVAr


@dataclass(frozen=True)
class PfrLimits:
    """Controllable range of a series router on one line.

    The router scales both terminal voltages of its line relative to the bus
    voltages: magnitude within [gamma_min, gamma_max], phase within
    [beta_min, beta_max] (radians). A line without a router carries the
    degenerate range [1, 1] x [0, 0].
    """

    gamma_min: float = 1.0
    gamma_max: float = 1.0
    beta_min: float = 0.0
    beta_max: float = 0.0

    @property
    def active(self) -> bool:
        return (
            self.gamma_max - self.gamma_min > 1e-12
            or self.beta_max - self.beta_min > 1e-12
        )


#: Range of a plain line terminal: unit ratio, zero phase shift.
NO_PFR = PfrLimits()


def terminal_angle_bounds(a: PfrLimits, b: PfrLimits) -> tuple[float, float]:
    """Bounds on the voltage-angle difference between two terminals at one bus.

    Both terminals see the same bus voltage, so the difference of their
    terminal angles is the difference of the two router phase shifts.
    """
    return (a.beta_min - b.beta_max, a.beta_max - b.beta_min)


@dataclass(frozen=True)
class Line:
    """Branch with series impedance and total line-charging susceptance (p.u.)."""

    line_id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    pfr: PfrLimits = NO_PFR

    @property
    def y_series(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    @property
    def y_shunt_end(self) -> complex:
        # half of the charging at each end
        return complex(0.0, 0.5 * self.b_charging)


@dataclass(frozen=True)
class Generator:
    """Synchronous machine with quadratic fuel cost and classical dynamics data.

    :param bus: bus id the machine connects to.
    :param p_min, p_max: active dispatch range (MW).
    :param q_min, q_max: reactive capability (MVAr).
    :param c2, c1, c0: fuel cost coefficients ($/MW^2 h, $/MWh, $/h).
    :param inertia: H in seconds on the system base.
    :param damping: D in p.u. torque per p.u. speed deviation.
    :param xd_t: transient reactance x'd (p.u.).
    """

    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c2: float
    c1: float
    c0: float
    inertia: float
    damping: float = 0.0
    xd_t: float = 0.3


@dataclass(frozen=True)
class WindFarm:
    """Wind injection with day-ahead and short-term interval half-widths."""

    bus: int
    p_forecast: float  # MW
    day_ahead_alpha: float = 0.10
    short_term_alpha: float = 0.03


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    problems: tuple[str, ...] = ()

    def __str__(self) -> str:
        if self.passed:
            return "case valid"
        return "case invalid:\n" + "\n".join(f"  - {p}" for p in self.problems)


@dataclass(frozen=True)
class NetworkCase:
    """Immutable case record; shareable across worker processes."""

    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    wind_farms: tuple[WindFarm, ...] = ()
    reference_bus: int | None = None
    f_hz: float = 60.0

    # ---- lookups -------------------------------------------------------

    def __post_init__(self):
        object.__setattr__(
            self, "_bus_pos", {b.bus_id: k for k, b in enumerate(self.buses)}
        )
        object.__setattr__(
            self, "_line_pos", {ln.line_id: k for k, ln in enumerate(self.lines)}
        )

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def pfr_lines(self) -> frozenset[int]:
        return frozenset(ln.line_id for ln in self.lines if ln.pfr.active)

    def bus_position(self, bus_id: int) -> int:
        return self._bus_pos[bus_id]

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self._bus_pos[bus_id]]

    def line(self, line_id: int) -> Line:
        return self.lines[self._line_pos[line_id]]

    def generators_at(self, bus_id: int) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if g.bus == bus_id)

    @property
    def slack_bus(self) -> int:
        """Reference bus: explicit if given, else the first generator bus."""
        if self.reference_bus is not None:
            return self.reference_bus
        return self.generators[0].bus

    def without_line(self, line_id: int) -> "NetworkCase":
        """Copy of the case with one line removed (post-contingency topology)."""
        kept = tuple(ln for ln in self.lines if ln.line_id != line_id)
        if len(kept) == len(self.lines):
            raise KeyError(f"no line with id {line_id}")
        return NetworkCase(
            name=self.name,
            base_mva=self.base_mva,
            buses=self.buses,
            lines=kept,
            generators=self.generators,
            wind_farms=self.wind_farms,
            reference_bus=self.reference_bus,
            f_hz=self.f_hz,
        )


def _connected(bus_ids: set[int], lines) -> bool:
    if not bus_ids:
        return False
    adj: dict[int, list[int]] = {b: [] for b in bus_ids}
    for ln in lines:
        if ln.from_bus in adj and ln.to_bus in adj:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
    seen = set()
    stack = [next(iter(bus_ids))]
    while stack:
        b = stack.pop()
        if b in seen:
            continue
        seen.add(b)
        stack.extend(adj[b])
    return seen == bus_ids


def validate_case(case: NetworkCase) -> ValidationReport:
    """Structural checks; report-only, never raises."""
    problems: list[str] = []
    bus_ids = [b.bus_id for b in case.buses]
    bus_set = set(bus_ids)

    if not case.buses:
        problems.append("case has no buses")
    if len(bus_set) != len(bus_ids):
        problems.append("duplicate bus ids")
    if case.base_mva <= 0:
        problems.append(f"base_mva must be positive, got {case.base_mva}")

    for b in case.buses:
        if not (0.0 < b.vmin <= b.vmax):
            problems.append(f"bus {b.bus_id}: voltage band [{b.vmin}, {b.vmax}] inverted or nonpositive")

    line_ids = [ln.line_id for ln in case.lines]
    if len(set(line_ids)) != len(line_ids):
        problems.append("duplicate line ids")
    for ln in case.lines:
        if ln.from_bus == ln.to_bus:
            problems.append(f"line {ln.line_id}: self-loop at bus {ln.from_bus}")
        for end in (ln.from_bus, ln.to_bus):
            if end not in bus_set:
                problems.append(f"line {ln.line_id}: unknown bus {end}")
        if abs(complex(ln.r, ln.x)) < 1e-12:
            problems.append(f"line {ln.line_id}: series impedance is zero")
        p = ln.pfr
        if not (p.gamma_min <= 1.0 <= p.gamma_max):
            problems.append(f"line {ln.line_id}: inverted PFR magnitude bound [{p.gamma_min}, {p.gamma_max}]")
        if not (p.beta_min <= 0.0 <= p.beta_max):
            problems.append(f"line {ln.line_id}: inverted PFR angle bound [{p.beta_min}, {p.beta_max}]")

    gen_buses = set()
    for g in case.generators:
        if g.bus not in bus_set:
            problems.append(f"generator at unknown bus {g.bus}")
        gen_buses.add(g.bus)
        if g.c2 < 0:
            problems.append(f"generator at bus {g.bus}: negative quadratic cost")
        if g.p_min > g.p_max:
            problems.append(f"generator at bus {g.bus}: P range inverted")
        if g.q_min > g.q_max:
            problems.append(f"generator at bus {g.bus}: Q range inverted")
        if g.inertia <= 0:
            problems.append(f"generator at bus {g.bus}: inertia must be positive")
        if g.xd_t <= 0:
            problems.append(f"generator at bus {g.bus}: x'd must be positive")
    if not case.generators:
        problems.append("case has no generators")

    for w in case.wind_farms:
        if w.bus not in bus_set:
            problems.append(f"wind farm at unknown bus {w.bus}")
        if w.bus in gen_buses:
            problems.append(f"wind farm shares bus {w.bus} with a generator")
        if w.p_forecast < 0:
            problems.append(f"wind farm at bus {w.bus}: negative forecast")
        if not (0.0 <= w.short_term_alpha <= w.day_ahead_alpha < 1.0):
            problems.append(
                f"wind farm at bus {w.bus}: interval widths must satisfy "
                f"0 <= short ({w.short_term_alpha}) <= day-ahead ({w.day_ahead_alpha}) < 1"
            )

    if case.reference_bus is not None and case.reference_bus not in bus_set:
        problems.append(f"reference bus {case.reference_bus} does not exist")

    if case.buses and not problems and not _connected(bus_set, case.lines):
        problems.append("network graph is not connected")

    return ValidationReport(passed=not problems, problems=tuple(problems))
