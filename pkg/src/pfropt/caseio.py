"""Plain-text case files.

Format (version 1): a header line ``PFROPT-CASE 1``, then whitespace-separated
tables introduced by ``[section]`` markers. ``#`` starts a comment. Angles in
the ``pfr`` table are degrees in the file, radians in memory. Loads and limits
are MW / MVAr, impedances per-unit on ``base_mva``.

    PFROPT-CASE 1
    name   demo
    base_mva 100.0
    f_hz   60.0

    [bus]      # bus_id vmin vmax p_load q_load
    [branch]   # line_id from to r x b_charging
    [gen]      # bus p_min p_max q_min q_max c2 c1 c0 inertia damping xd_t
    [wind]     # bus p_forecast alpha_day_ahead alpha_short_term
    [pfr]      # line_id gamma_min gamma_max beta_min_deg beta_max_deg
    [meta]     # key value   (reference_bus)

The gen table carries the cost row inline; a separate ``[gencost]`` section
(bus c2 c1 c0) is also accepted and overrides the inline coefficients.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

from .network import Bus, Generator, Line, NetworkCase, PfrLimits, WindFarm

HEADER = "PFROPT-CASE 1"


class CaseFormatError(ValueError):
    pass


def _tokenize(text: str):
    """Yield (lineno, tokens) for payload lines, comments stripped."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def loads_case(text: str, name_hint: str = "case") -> NetworkCase:
    rows = list(_tokenize(text))
    if not rows or " ".join(rows[0][1]) != HEADER:
        raise CaseFormatError(f"missing '{HEADER}' header line")

    name = name_hint
    base_mva = 100.0
    f_hz = 60.0
    reference_bus: int | None = None
    buses: list[Bus] = []
    lines: list[Line] = []
    gens: list[list[str]] = []
    gencost: dict[int, tuple[float, float, float]] = {}
    winds: list[WindFarm] = []
    pfr: dict[int, PfrLimits] = {}

    section = None
    for lineno, tok in rows[1:]:
        if tok[0].startswith("["):
            section = tok[0].strip("[]").lower()
            continue
        try:
            if section is None:
                key = tok[0].lower()
                if key == "name":
                    name = tok[1]
                elif key == "base_mva":
                    base_mva = float(tok[1])
                elif key == "f_hz":
                    f_hz = float(tok[1])
                else:
                    raise CaseFormatError(f"line {lineno}: unknown preamble key {tok[0]!r}")
            elif section == "bus":
                buses.append(
                    Bus(
                        bus_id=int(tok[0]),
                        vmin=float(tok[1]),
                        vmax=float(tok[2]),
                        p_load=float(tok[3]),
                        q_load=float(tok[4]),
                    )
                )
            elif section == "branch":
                lines.append(
                    Line(
                        line_id=int(tok[0]),
                        from_bus=int(tok[1]),
                        to_bus=int(tok[2]),
                        r=float(tok[3]),
                        x=float(tok[4]),
                        b_charging=float(tok[5]) if len(tok) > 5 else 0.0,
                    )
                )
            elif section == "gen":
                gens.append(tok)
            elif section == "gencost":
                gencost[int(tok[0])] = (float(tok[1]), float(tok[2]), float(tok[3]))
            elif section == "wind":
                winds.append(
                    WindFarm(
                        bus=int(tok[0]),
                        p_forecast=float(tok[1]),
                        day_ahead_alpha=float(tok[2]),
                        short_term_alpha=float(tok[3]),
                    )
                )
            elif section == "pfr":
                pfr[int(tok[0])] = PfrLimits(
                    gamma_min=float(tok[1]),
                    gamma_max=float(tok[2]),
                    beta_min=math.radians(float(tok[3])),
                    beta_max=math.radians(float(tok[4])),
                )
            elif section == "meta":
                if tok[0].lower() == "reference_bus":
                    reference_bus = int(tok[1])
                else:
                    raise CaseFormatError(f"line {lineno}: unknown meta key {tok[0]!r}")
            else:
                raise CaseFormatError(f"line {lineno}: unknown section [{section}]")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, CaseFormatError):
                raise
            raise CaseFormatError(f"line {lineno}: bad row in [{section}]: {exc}") from exc

    generators = []
    for tok in gens:
        bus = int(tok[0])
        c2, c1, c0 = gencost.get(bus, (float(tok[5]), float(tok[6]), float(tok[7])))
        generators.append(
            Generator(
                bus=bus,
                p_min=float(tok[1]),
                p_max=float(tok[2]),
                q_min=float(tok[3]),
                q_max=float(tok[4]),
                c2=c2,
                c1=c1,
                c0=c0,
                inertia=float(tok[8]),
                damping=float(tok[9]),
                xd_t=float(tok[10]),
            )
        )

    lines = [
        Line(
            line_id=ln.line_id,
            from_bus=ln.from_bus,
            to_bus=ln.to_bus,
            r=ln.r,
            x=ln.x,
            b_charging=ln.b_charging,
            pfr=pfr.get(ln.line_id, ln.pfr),
        )
        for ln in lines
    ]
    for lid in pfr:
        if lid not in {ln.line_id for ln in lines}:
            raise CaseFormatError(f"[pfr] references unknown line {lid}")

    return NetworkCase(
        name=name,
        base_mva=base_mva,
        buses=tuple(buses),
        lines=tuple(lines),
        generators=tuple(generators),
        wind_farms=tuple(winds),
        reference_bus=reference_bus,
        f_hz=f_hz,
    )


def load_case(path: str | Path) -> NetworkCase:
    path = Path(path)
    return loads_case(path.read_text(), name_hint=path.stem)


def dumps_case(case: NetworkCase) -> str:
    out = [HEADER]
    out.append(f"name {case.name}")
    out.append(f"base_mva {case.base_mva!r}")
    out.append(f"f_hz {case.f_hz!r}")
    out.append("")
    out.append("[bus]  # bus_id vmin vmax p_load q_load")
    for b in case.buses:
        out.append(f"{b.bus_id} {b.vmin!r} {b.vmax!r} {b.p_load!r} {b.q_load!r}")
    out.append("")
    out.append("[branch]  # line_id from to r x b_charging")
    for ln in case.lines:
        out.append(
            f"{ln.line_id} {ln.from_bus} {ln.to_bus} {ln.r!r} {ln.x!r} {ln.b_charging!r}"
        )
    out.append("")
    out.append("[gen]  # bus p_min p_max q_min q_max c2 c1 c0 inertia damping xd_t")
    for g in case.generators:
        out.append(
            f"{g.bus} {g.p_min!r} {g.p_max!r} {g.q_min!r} {g.q_max!r} "
            f"{g.c2!r} {g.c1!r} {g.c0!r} {g.inertia!r} {g.damping!r} {g.xd_t!r}"
        )
    if case.wind_farms:
        out.append("")
        out.append("[wind]  # bus p_forecast alpha_day_ahead alpha_short_term")
        for w in case.wind_farms:
            out.append(
                f"{w.bus} {w.p_forecast!r} {w.day_ahead_alpha!r} {w.short_term_alpha!r}"
            )
    routers = [ln for ln in case.lines if ln.pfr.active]
    if routers:
        out.append("")
        out.append("[pfr]  # line_id gamma_min gamma_max beta_min_deg beta_max_deg")
        for ln in routers:
            p = ln.pfr
            out.append(
                f"{ln.line_id} {p.gamma_min!r} {p.gamma_max!r} "
                f"{math.degrees(p.beta_min)!r} {math.degrees(p.beta_max)!r}"
            )
    if case.reference_bus is not None:
        out.append("")
        out.append("[meta]")
        out.append(f"reference_bus {case.reference_bus}")
    return "\n".join(out) + "\n"


def save_case(case: NetworkCase, path: str | Path) -> None:
    Path(path).write_text(dumps_case(case))


def load_bundled(name: str) -> NetworkCase:
    """Load a case shipped inside the package (``wscc9``, ``smib2``, ...)."""
    root = resources.files("pfropt.cases")
    ref = root.joinpath(f"{name}.case")
    if not ref.is_file():
        known = sorted(
            p.name[: -len(".case")]
            for p in root.iterdir()
            if p.name.endswith(".case")
        )
        raise CaseFormatError(
            f"no bundled case {name!r}; available: {', '.join(known)}"
        )
    return loads_case(ref.read_text(), name_hint=name)


def bundled_path(filename: str) -> Path:
    """Filesystem path of a bundled data file (dispatches, configs)."""
    return Path(str(resources.files("pfropt.cases").joinpath(filename)))
