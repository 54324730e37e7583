"""Reader and writer for a subset of the EPANET INP text format.

Supported sections: TITLE, JUNCTIONS, RESERVOIRS, TANKS, PIPES, PUMPS,
VALVES, STATUS, DEMANDS, PATTERNS, CURVES, TIMES, OPTIONS. Sections that
change hydraulics in ways this model cannot represent (CONTROLS, RULES,
EMITTERS) or that belong to water-quality modelling (QUALITY, SOURCES)
are rejected when non-empty. Display-only sections such as COORDINATES
are kept verbatim and reported as ignored.

Units: US customary flow units only (GPM, CFS, MGD, IMGD, AFD); flows are
converted to GPM, pipe and valve diameters from inches to feet, PRV
settings from psi to hydraulic head. Only the Hazen-Williams head-loss
formula is accepted.
"""

from __future__ import annotations

import math
import re
from decimal import Decimal, localcontext
from dataclasses import dataclass, field
from typing import Optional

from .errors import InpError, TopologyError
from .network import (
    Junction,
    Network,
    Pipe,
    Pump,
    Reservoir,
    Tank,
    Valve,
    ValveKind,
    ValveStatus,
)

FLOW_UNITS = {"GPM": 1.0, "CFS": 448.8311688, "MGD": 694.4444444, "IMGD": 833.9568, "AFD": 226.2857143}
SI_UNITS = {"LPS", "LPM", "MLD", "CMH", "CMD"}
PSI_TO_FT = 2.30666
SHUTOFF_FACTOR = 1.33334  # single-point curves: shutoff head / design head

SUPPORTED = (
    "TITLE", "JUNCTIONS", "RESERVOIRS", "TANKS", "PIPES", "PUMPS", "VALVES",
    "STATUS", "DEMANDS", "PATTERNS", "CURVES", "TIMES", "OPTIONS",
)
REJECTED = ("QUALITY", "SOURCES", "RULES", "CONTROLS", "EMITTERS")
PASSTHROUGH = (
    "COORDINATES", "VERTICES", "LABELS", "BACKDROP", "TAGS", "REPORT", "ENERGY",
    "REACTIONS", "MIXING", "END",
)


@dataclass(frozen=True)
class Line:
    number: int
    tokens: tuple
    columns: tuple
    text: str


@dataclass
class Section:
    name: str
    line: int
    lines: list = field(default_factory=list)


@dataclass
class InpDocument:
    sections: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def get(self, name: str) -> list:
        out = []
        for s in self.sections:
            if s.name == name:
                out.extend(s.lines)
        return out


def _split(raw: str):
    body = raw.split(";", 1)[0]
    toks, cols = [], []
    for m in re.finditer(r"\S+", body):
        toks.append(m.group())
        cols.append(m.start() + 1)
    return tuple(toks), tuple(cols)


def tokenize_inp(text) -> InpDocument:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InpError(f"input is not valid UTF-8 (byte {exc.start})") from None
    doc = InpDocument()
    current: Optional[Section] = None
    for n, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("["):
            m = re.match(r"\[\s*([A-Za-z_]+)\s*\]", stripped)
            if not m:
                raise InpError("malformed section header", n, raw.index("[") + 1)
            current = Section(m.group(1).upper(), n)
            doc.sections.append(current)
            continue
        toks, cols = _split(raw)
        if not toks:
            continue
        if current is None:
            raise InpError("data before the first section header", n, cols[0])
        current.lines.append(Line(n, toks, cols, raw))
    for s in doc.sections:
        if s.name in REJECTED and s.lines:
            raise InpError(f"section [{s.name}] is not supported by this model", s.line, 1, s.name)
        if s.name not in SUPPORTED and s.name not in REJECTED:
            kind = "ignored" if s.name in PASSTHROUGH else "unknown section, ignored"
            doc.diagnostics.append(f"[{s.name}] line {s.line}: {kind}")
    return doc


def _num(line: Line, i: int, section: str, what: str) -> float:
    if i >= len(line.tokens):
        col = line.columns[-1] + len(line.tokens[-1]) if line.tokens else 1
        raise InpError(f"missing {what}", line.number, col, section)
    tok = line.tokens[i]
    try:
        v = float(tok)
    except ValueError:
        raise InpError(f"{what}: {tok!r} is not a number", line.number, line.columns[i], section) from None
    if not math.isfinite(v):
        raise InpError(f"{what}: {tok!r} is not finite", line.number, line.columns[i], section)
    return v


def _need(line: Line, n: int, section: str, what: str):
    if len(line.tokens) < n:
        col = line.columns[-1] + len(line.tokens[-1])
        raise InpError(f"expected {what}", line.number, col, section)


def _inch_to_ft(tok: str) -> float:
    # decimal arithmetic rounds once, so the writer can always hit the value exactly
    with localcontext() as ctx:
        ctx.prec = 80
        return float(Decimal(tok) / 12)


def _psi_to_head(elevation: float, tok: str) -> float:
    with localcontext() as ctx:
        ctx.prec = 80
        return float(Decimal(repr(elevation)) + Decimal(tok) * Decimal(repr(PSI_TO_FT)))


def parse_duration(text: str, unit: Optional[str] = None) -> float:
    """Seconds for an INP time value such as ``24:00``, ``6``, ``30 MIN``."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        while len(parts) < 3:
            parts.append(0.0)
        return parts[0] * 3600 + parts[1] * 60 + parts[2]
    v = float(text)
    u = (unit or "HOURS").upper()
    if u.startswith("SEC"):
        return v
    if u.startswith("MIN"):
        return v * 60
    if u.startswith("HOUR"):
        return v * 3600
    if u.startswith("DAY"):
        return v * 86400
    raise ValueError(f"unknown time unit {unit!r}")


def _fit_curve(cid: str, pts: list, where) -> tuple:
    """(h0, r, beta) from a 1- or 3-point head curve."""
    if len(pts) == 1:
        q, h = pts[0]
        if q <= 0 or h <= 0:
            raise InpError(f"curve {cid}: design point must be positive", *where)
        h0 = SHUTOFF_FACTOR * h
        return h0, (h0 - h) / q**2, 2.0
    if len(pts) == 3 and pts[0][0] == 0.0:
        (_, h0), (q1, h1), (q2, h2) = pts
        h4, h5 = h0 - h1, h0 - h2
        if not (0 < q1 < q2) or not (0 < h4 < h5):
            raise InpError(f"curve {cid}: points do not form a decreasing power curve", *where)
        beta = math.log(h5 / h4) / math.log(q2 / q1)
        return h0, h4 / q1**beta, beta
    raise InpError(
        f"curve {cid}: only single-point or three-point curves starting at zero flow are supported",
        *where,
    )


def parse_inp(text, diagnostics: Optional[list] = None) -> Network:
    """Parse INP text (str or bytes) into a :class:`Network`.

    Any problem raises :class:`InpError` with line/column/section when
    known. Notes about ignored content are appended to ``diagnostics``.
    """
    try:
        return _parse(text, diagnostics)
    except InpError:
        raise
    except (TopologyError, ValueError, TypeError, OverflowError, ZeroDivisionError, IndexError, KeyError) as exc:
        raise InpError(str(exc)) from None


def _parse(text, diagnostics):
    doc = tokenize_inp(text)
    diag = list(doc.diagnostics)

    # options first: they decide the units
    flow_factor = 1.0
    default_pattern = None
    for ln in doc.get("OPTIONS"):
        key = ln.tokens[0].upper()
        if key == "UNITS":
            _need(ln, 2, "OPTIONS", "flow units")
            u = ln.tokens[1].upper()
            if u in SI_UNITS:
                raise InpError(f"SI flow units {u} are not supported", ln.number, ln.columns[1], "OPTIONS")
            if u not in FLOW_UNITS:
                raise InpError(f"unknown flow units {u}", ln.number, ln.columns[1], "OPTIONS")
            flow_factor = FLOW_UNITS[u]
        elif key == "HEADLOSS":
            _need(ln, 2, "OPTIONS", "head-loss formula")
            if ln.tokens[1].upper() != "H-W":
                raise InpError(
                    f"head-loss formula {ln.tokens[1]} is not supported (only H-W)",
                    ln.number, ln.columns[1], "OPTIONS",
                )
        elif key == "PATTERN":
            _need(ln, 2, "OPTIONS", "pattern id")
            default_pattern = ln.tokens[1]
        else:
            diag.append(f"[OPTIONS] line {ln.number}: option {ln.tokens[0]} ignored")

    times = {"duration": 0.0, "hydraulic_step": 3600.0, "pattern_step": 3600.0}
    for ln in doc.get("TIMES"):
        toks = [t.upper() for t in ln.tokens]
        key = None
        if toks[0] == "DURATION":
            key, vi = "duration", 1
        elif toks[:2] == ["HYDRAULIC", "TIMESTEP"]:
            key, vi = "hydraulic_step", 2
        elif toks[:2] == ["PATTERN", "TIMESTEP"]:
            key, vi = "pattern_step", 2
        if key is None:
            diag.append(f"[TIMES] line {ln.number}: {' '.join(ln.tokens)} ignored")
            continue
        _need(ln, vi + 1, "TIMES", "a time value")
        try:
            times[key] = parse_duration(ln.tokens[vi], ln.tokens[vi + 1] if len(ln.tokens) > vi + 1 else None)
        except ValueError:
            raise InpError(f"bad time value {ln.tokens[vi]!r}", ln.number, ln.columns[vi], "TIMES") from None
    if times["hydraulic_step"] <= 0 or times["pattern_step"] <= 0:
        raise InpError("time steps must be positive", section="TIMES")

    patterns: dict = {}
    for ln in doc.get("PATTERNS"):
        pid = ln.tokens[0]
        vals = [_num(ln, i, "PATTERNS", "multiplier") for i in range(1, len(ln.tokens))]
        patterns.setdefault(pid, []).extend(vals)

    curves: dict = {}
    curve_line: dict = {}
    for ln in doc.get("CURVES"):
        _need(ln, 3, "CURVES", "curve id, x and y")
        cid = ln.tokens[0]
        curves.setdefault(cid, []).append((_num(ln, 1, "CURVES", "x"), _num(ln, 2, "CURVES", "y")))
        curve_line.setdefault(cid, ln)

    seen_nodes: dict = {}

    def claim_node(nid, ln, section):
        if nid in seen_nodes:
            raise InpError(f"duplicate node id {nid!r}", ln.number, ln.columns[0], section)
        seen_nodes[nid] = ln

    junctions = {}
    for ln in doc.get("JUNCTIONS"):
        _need(ln, 2, "JUNCTIONS", "id and elevation")
        jid = ln.tokens[0]
        claim_node(jid, ln, "JUNCTIONS")
        elev = _num(ln, 1, "JUNCTIONS", "elevation")
        dem = _num(ln, 2, "JUNCTIONS", "demand") * flow_factor if len(ln.tokens) > 2 else 0.0
        pat = ln.tokens[3] if len(ln.tokens) > 3 else None
        junctions[jid] = [elev, dem, pat]

    demand_lines: dict = {}
    for ln in doc.get("DEMANDS"):
        _need(ln, 2, "DEMANDS", "junction id and demand")
        jid = ln.tokens[0]
        if jid not in junctions:
            raise InpError(f"demand for unknown junction {jid!r}", ln.number, ln.columns[0], "DEMANDS")
        pat = ln.tokens[2] if len(ln.tokens) > 2 else None
        demand_lines.setdefault(jid, []).append((_num(ln, 1, "DEMANDS", "demand") * flow_factor, pat, ln))
    for jid, entries in demand_lines.items():
        pats = {p for _, p, _ in entries}
        if len(pats) > 1:
            ln = entries[1][2]
            raise InpError(
                f"junction {jid}: several demand categories with different patterns are not supported",
                ln.number, ln.columns[0], "DEMANDS",
            )
        junctions[jid][1] = sum(d for d, _, _ in entries)
        junctions[jid][2] = entries[0][1]

    for jid, (_, _, pat) in junctions.items():
        if pat is not None and pat not in patterns:
            raise InpError(f"junction {jid}: unknown pattern {pat!r}", section="JUNCTIONS")

    reservoirs = []
    for ln in doc.get("RESERVOIRS"):
        _need(ln, 2, "RESERVOIRS", "id and head")
        claim_node(ln.tokens[0], ln, "RESERVOIRS")
        if len(ln.tokens) > 2:
            raise InpError("reservoir head patterns are not supported", ln.number, ln.columns[2], "RESERVOIRS")
        reservoirs.append(Reservoir(ln.tokens[0], _num(ln, 1, "RESERVOIRS", "head")))

    tanks = []
    for ln in doc.get("TANKS"):
        _need(ln, 6, "TANKS", "id, elevation, init/min/max level and diameter")
        claim_node(ln.tokens[0], ln, "TANKS")
        vals = [_num(ln, i, "TANKS", name) for i, name in
                enumerate(["", "elevation", "initial level", "minimum level", "maximum level", "diameter"]) if i]
        if len(ln.tokens) > 7 and ln.tokens[7] not in ("*",):
            raise InpError("tank volume curves are not supported", ln.number, ln.columns[7], "TANKS")
        try:
            tanks.append(Tank(ln.tokens[0], *vals))
        except ValueError as exc:
            raise InpError(str(exc), ln.number, ln.columns[0], "TANKS") from None

    elev_of = {jid: v[0] for jid, v in junctions.items()}
    elev_of.update({r.id: r.head for r in reservoirs})
    elev_of.update({t.id: t.elevation for t in tanks})

    seen_links: dict = {}

    def claim_link(lid, ln, section):
        if lid in seen_links:
            raise InpError(f"duplicate link id {lid!r}", ln.number, ln.columns[0], section)
        seen_links[lid] = ln
        for k in (1, 2):
            if ln.tokens[k] not in seen_nodes:
                raise InpError(
                    f"link {lid} references unknown node {ln.tokens[k]!r}", ln.number, ln.columns[k], section
                )

    pipes = []
    for ln in doc.get("PIPES"):
        _need(ln, 6, "PIPES", "id, nodes, length, diameter and roughness")
        claim_link(ln.tokens[0], ln, "PIPES")
        length = _num(ln, 3, "PIPES", "length")
        diam = _num(ln, 4, "PIPES", "diameter")
        rough = _num(ln, 5, "PIPES", "roughness")
        if len(ln.tokens) > 6 and _num(ln, 6, "PIPES", "minor loss") != 0:
            diag.append(f"[PIPES] line {ln.number}: minor loss of {ln.tokens[0]} ignored")
        if len(ln.tokens) > 7 and ln.tokens[7].upper() != "OPEN":
            raise InpError(
                f"pipe status {ln.tokens[7]} is not supported", ln.number, ln.columns[7], "PIPES"
            )
        try:
            pipes.append(Pipe(ln.tokens[0], ln.tokens[1], ln.tokens[2], length, _inch_to_ft(ln.tokens[4]), rough))
        except ValueError as exc:
            raise InpError(str(exc), ln.number, ln.columns[0], "PIPES") from None

    pumps = []
    for ln in doc.get("PUMPS"):
        _need(ln, 3, "PUMPS", "id and nodes")
        claim_link(ln.tokens[0], ln, "PUMPS")
        opts = [t.upper() for t in ln.tokens[3:]]
        curve_id = None
        i = 0
        while i < len(opts):
            key = opts[i]
            if i + 1 >= len(opts):
                raise InpError(f"pump option {key} has no value", ln.number, ln.columns[3 + i], "PUMPS")
            if key == "HEAD":
                curve_id = ln.tokens[3 + i + 1]
            elif key == "SPEED":
                if _num(ln, 3 + i + 1, "PUMPS", "speed") != 1.0:
                    raise InpError("pump speeds other than 1 are not supported", ln.number, ln.columns[4 + i], "PUMPS")
            else:
                raise InpError(f"pump option {key} is not supported", ln.number, ln.columns[3 + i], "PUMPS")
            i += 2
        if curve_id is None:
            raise InpError("pump needs a HEAD curve", ln.number, ln.columns[0], "PUMPS")
        if curve_id not in curves:
            raise InpError(f"unknown curve {curve_id!r}", ln.number, ln.columns[0], "PUMPS")
        pts = [(q * flow_factor, h) for q, h in curves[curve_id]]
        cl = curve_line[curve_id]
        h0, r, beta = _fit_curve(curve_id, pts, (cl.number, cl.columns[0], "CURVES"))
        pumps.append(
            Pump(ln.tokens[0], ln.tokens[1], ln.tokens[2], h0, r, beta, curve_id, tuple(curves[curve_id]))
        )

    valve_status = {}
    for ln in doc.get("STATUS"):
        _need(ln, 2, "STATUS", "link id and status")
        valve_status[ln.tokens[0]] = (ln, ln.tokens[1].upper())

    valves = []
    for ln in doc.get("VALVES"):
        _need(ln, 6, "VALVES", "id, nodes, diameter, type and setting")
        vid = ln.tokens[0]
        claim_link(vid, ln, "VALVES")
        diam = _num(ln, 3, "VALVES", "diameter")
        vtype = ln.tokens[4].upper()
        if vtype not in ("FCV", "PRV"):
            raise InpError(f"valve type {vtype} is not supported (FCV or PRV only)", ln.number, ln.columns[4], "VALVES")
        setting = _num(ln, 5, "VALVES", "setting")
        if len(ln.tokens) > 6 and _num(ln, 6, "VALVES", "minor loss") != 0:
            diag.append(f"[VALVES] line {ln.number}: minor loss of {vid} ignored")
        if vtype == "FCV":
            setting *= flow_factor
        else:
            setting = _psi_to_head(elev_of[ln.tokens[2]], ln.tokens[5])
        status = ValveStatus.ACTIVE
        if vid in valve_status:
            sln, st = valve_status.pop(vid)
            if st == "OPEN":
                status = ValveStatus.OPEN
            elif st != "ACTIVE":
                raise InpError(f"valve status {st} is not supported", sln.number, sln.columns[1], "STATUS")
        valves.append(Valve(vid, ln.tokens[1], ln.tokens[2], ValveKind(vtype), setting, _inch_to_ft(ln.tokens[3]), status))
    for lid, (sln, st) in valve_status.items():
        if lid not in seen_links:
            raise InpError(f"status for unknown link {lid!r}", sln.number, sln.columns[0], "STATUS")
        if st != "OPEN":
            raise InpError(f"link {lid}: status {st} is not supported", sln.number, sln.columns[1], "STATUS")

    if not junctions:
        diag.append("network has no junctions")
    title = " ".join(" ".join(ln.tokens) for ln in doc.get("TITLE")) or "network"
    net = Network(
        name=title,
        junctions=tuple(Junction(jid, v[0], v[1], v[2]) for jid, v in junctions.items()),
        reservoirs=tuple(reservoirs),
        tanks=tuple(tanks),
        pipes=tuple(pipes),
        pumps=tuple(pumps),
        valves=tuple(valves),
        patterns={k: tuple(v) for k, v in patterns.items()},
        duration=times["duration"],
        hydraulic_step=times["hydraulic_step"],
        pattern_step=times["pattern_step"],
        default_pattern=default_pattern if default_pattern in patterns else (
            "1" if "1" in patterns and default_pattern is None else None
        ),
    )
    if diagnostics is not None:
        diagnostics.extend(diag)
    return net


def read_inp(path) -> Network:
    with open(path, "rb") as fh:
        return parse_inp(fh.read())


def _f(v: float) -> str:
    return repr(float(v))


def _token_for(value: float, forward, approx: Decimal) -> str:
    """Shortest-looking token ``t`` with ``forward(t) == value``.

    Tries the repr of floats near ``approx`` first and falls back to the
    full decimal expansion, which the parser's decimal arithmetic maps
    back exactly.
    """
    c = float(approx)
    cands = [c]
    up = down = c
    for _ in range(4):
        up, down = math.nextafter(up, math.inf), math.nextafter(down, -math.inf)
        cands += [up, down]
    for c in cands:
        if forward(repr(c)) == value:
            return repr(c)
    return str(approx)


def _inches(feet: float) -> str:
    with localcontext() as ctx:
        ctx.prec = 1000
        exact = Decimal(feet) * 12
    return _token_for(feet, _inch_to_ft, exact)


def _psi(setting: float, elevation: float) -> str:
    with localcontext() as ctx:
        ctx.prec = 40
        approx = (Decimal(setting) - Decimal(repr(elevation))) / Decimal(repr(PSI_TO_FT))
    return _token_for(setting, lambda t: _psi_to_head(elevation, t), approx)


def _hms(seconds: float) -> str:
    s = int(round(seconds))
    return f"{s // 3600}:{(s % 3600) // 60:02d}:{s % 60:02d}"


def write_inp(net: Network) -> str:
    """Serialize ``net`` to INP text that :func:`parse_inp` reads back."""
    out = ["[TITLE]", net.name, "", "[JUNCTIONS]", ";ID  Elev  Demand  Pattern"]
    for j in net.junctions:
        out.append(f"{j.id}  {_f(j.elevation)}  {_f(j.base_demand)}" + (f"  {j.pattern}" if j.pattern else ""))
    out += ["", "[RESERVOIRS]", ";ID  Head"]
    out += [f"{r.id}  {_f(r.head)}" for r in net.reservoirs]
    out += ["", "[TANKS]", ";ID  Elev  InitLevel  MinLevel  MaxLevel  Diameter"]
    out += [
        f"{t.id}  {_f(t.elevation)}  {_f(t.init_level)}  {_f(t.min_level)}  {_f(t.max_level)}  {_f(t.diameter)}"
        for t in net.tanks
    ]
    out += ["", "[PIPES]", ";ID  Node1  Node2  Length  Diameter  Roughness"]
    out += [
        f"{p.id}  {p.start}  {p.end}  {_f(p.length)}  {_inches(p.diameter)}  {_f(p.roughness)}"
        for p in net.pipes
    ]
    curves = []
    out += ["", "[PUMPS]", ";ID  Node1  Node2  Parameters"]
    for p in net.pumps:
        cid = p.curve_id or f"C_{p.id}"
        out.append(f"{p.id}  {p.start}  {p.end}  HEAD {cid}")
        if p.curve:
            pts = list(p.curve)
        else:
            q1 = (0.25 * p.h0 / p.r) ** (1.0 / p.beta)
            pts = [(0.0, p.h0), (q1, p.h0 - p.r * q1**p.beta), (2 * q1, p.h0 - p.r * (2 * q1) ** p.beta)]
        curves += [f"{cid}  {_f(x)}  {_f(y)}" for x, y in pts]
    out += ["", "[VALVES]", ";ID  Node1  Node2  Diameter  Type  Setting"]
    status = []
    for v in net.valves:
        if v.kind is ValveKind.PRV:
            setting = _psi(v.setting, net.node(v.end).elevation)
        else:
            setting = _f(v.setting)
        out.append(f"{v.id}  {v.start}  {v.end}  {_inches(v.diameter)}  {v.kind.value}  {setting}")
        if v.status is ValveStatus.OPEN:
            status.append(f"{v.id}  OPEN")
    out += ["", "[STATUS]"] + status
    out += ["", "[CURVES]", ";ID  X  Y"] + curves
    out += ["", "[PATTERNS]"]
    for pid, mult in net.patterns.items():
        out.append(f"{pid}  " + "  ".join(_f(m) for m in mult))
    out += [
        "",
        "[TIMES]",
        f"Duration  {_hms(net.duration)}",
        f"Hydraulic Timestep  {_hms(net.hydraulic_step)}",
        f"Pattern Timestep  {_hms(net.pattern_step)}",
        "",
        "[OPTIONS]",
        "Units  GPM",
        "Headloss  H-W",
    ]
    if net.default_pattern:
        out.append(f"Pattern  {net.default_pattern}")
    out += ["", "[END]", ""]
    return "\n".join(out)
