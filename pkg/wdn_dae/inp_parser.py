"""
INP Parser Module
=================
Reads a restricted EPANET-style ``.INP`` text into a unit-normalized
NetworkDescription (SI: m, m^3/s, s) and writes it back in canonical form.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from decimal import Decimal, localcontext
from difflib import get_close_matches
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from .error_handler import (
    MalformedLine,
    MissingSection,
    UnresolvedReference,
    UnsupportedFeature,
    UnsupportedUnits,
)

logger = logging.getLogger(__name__)

# Flow units to m^3/s, exact so that conversions round once
FLOW_UNITS = {
    "CFS": Fraction("0.028316846592"),
    "GPM": Fraction("3.785411784e-3") / 60,
    "MGD": Fraction("3.785411784e3") / 86400,
    "IMGD": Fraction("4.54609e3") / 86400,
    "AFD": Fraction("1233.48183754752") / 86400,
    "LPS": Fraction(1, 1000),
    "LPM": Fraction(1, 60000),
    "MLD": Fraction(1000, 86400),
    "CMH": Fraction(1, 3600),
    "CMD": Fraction(1, 86400),
}
US_UNITS = {"CFS", "GPM", "MGD", "IMGD", "AFD"}

FOOT = Fraction("0.3048")
INCH = Fraction("0.0254")
PSI_TO_M = Fraction("0.70307")  # metres of water per psi

SUPPORTED_SECTIONS = {
    "TITLE", "JUNCTIONS", "RESERVOIRS", "TANKS", "PIPES", "PUMPS", "VALVES",
    "DEMANDS", "PATTERNS", "CURVES", "STATUS", "CONTROLS", "TIMES", "OPTIONS",
}
VALVE_KINDS = ("GPV", "TCV", "PBV", "FCV", "PRV", "PSV")
REGULATING_KINDS = ("FCV", "PRV", "PSV")

_TIME_UNITS = {
    "SEC": 1.0, "SECOND": 1.0, "SECONDS": 1.0,
    "MIN": 60.0, "MINUTE": 60.0, "MINUTES": 60.0,
    "HOUR": 3600.0, "HOURS": 3600.0,
    "DAY": 86400.0, "DAYS": 86400.0,
}


@dataclass
class Junction:
    id: str
    elevation: float
    base_demand: float = 0.0
    pattern_id: Optional[str] = None


@dataclass
class Reservoir:
    id: str
    head: float


@dataclass
class Tank:
    id: str
    elevation: float
    init_level: float
    min_level: float
    max_level: float
    diameter: float


@dataclass
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float
    diameter: float
    roughness: float
    minor_loss: float = 0.0
    initial_status: str = "open"


@dataclass
class Pump:
    id: str
    from_node: str
    to_node: str
    curve_id: str
    speed: float = 1.0
    initial_status: str = "open"


@dataclass
class Valve:
    id: str
    from_node: str
    to_node: str
    diameter: float
    kind: str
    setting: float = 0.0
    minor_loss: float = 0.0
    status: str = "open"
    curve_id: Optional[str] = None


@dataclass
class Control:
    time: float
    link_id: str
    attribute: str  # speed | setting | status
    value: object   # float, or "open"/"closed"


@dataclass
class Options:
    headloss_model: str = "HW"
    flow_units: str = "LPS"
    duration: float = 0.0
    hydraulic_step: float = 3600.0
    pattern_step: float = 3600.0
    default_pattern: Optional[str] = None


@dataclass
class Diagnostic:
    """One finding from :func:`validate` or the parser's warning list."""
    severity: str
    code: str
    id: Optional[str]
    message: str
    line: Optional[int] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class NetworkDescription:
    """Parsed network with every quantity in SI units."""
    title: str = ""
    junctions: List[Junction] = field(default_factory=list)
    reservoirs: List[Reservoir] = field(default_factory=list)
    tanks: List[Tank] = field(default_factory=list)
    pipes: List[Pipe] = field(default_factory=list)
    pumps: List[Pump] = field(default_factory=list)
    valves: List[Valve] = field(default_factory=list)
    curves: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)
    patterns: Dict[str, List[float]] = field(default_factory=dict)
    options: Options = field(default_factory=Options)
    controls: List[Control] = field(default_factory=list)
    # diagnostics carry source line numbers, so they stay out of equality
    warnings: List[Diagnostic] = field(default_factory=list, compare=False)
    passthrough: Dict[str, List[str]] = field(default_factory=dict)
    provenance: Dict[str, str] = field(default_factory=dict)

    @property
    def node_ids(self) -> List[str]:
        return ([j.id for j in self.junctions] + [t.id for t in self.tanks]
                + [r.id for r in self.reservoirs])

    @property
    def link_ids(self) -> List[str]:
        return [p.id for p in self.pipes] + [m.id for m in self.pumps] + [v.id for v in self.valves]

    def counts(self) -> Dict[str, int]:
        return {
            "n_J": len(self.junctions),
            "n_A": len(self.tanks),
            "n_R": len(self.reservoirs),
            "n_pipe": len(self.pipes),
            "n_M": len(self.pumps),
            "n_W": len(self.valves),
        }


class _Row:
    __slots__ = ("section", "line", "tokens", "text")

    def __init__(self, section, line, tokens, text):
        self.section = section
        self.line = line
        self.tokens = tokens
        self.text = text


def _sectionize(text: str) -> Tuple[Dict[str, List[_Row]], List[Diagnostic], Dict[str, List[str]]]:
    sections: Dict[str, List[_Row]] = {}
    warnings: List[Diagnostic] = []
    passthrough: Dict[str, List[str]] = {}
    current = None
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().upper()
            if current == "END":
                break
            if current not in SUPPORTED_SECTIONS:
                warnings.append(Diagnostic("warning", "SkippedSection", current,
                                           f"section [{current}] skipped", number))
                passthrough.setdefault(current, [])
            else:
                sections.setdefault(current, [])
            continue
        if current is None:
            raise MalformedLine("<none>", number, raw.strip(), "data before the first section header")
        if current in SUPPORTED_SECTIONS:
            sections[current].append(_Row(current, number, line.split(), raw.strip()))
        else:
            passthrough[current].append(line)
    return sections, warnings, passthrough


def _number(row: _Row, index: int) -> float:
    try:
        return float(row.tokens[index])
    except ValueError:
        raise MalformedLine(row.section, row.line, row.text, f"'{row.tokens[index]}' is not a number")


def _convert(token: str, factor: Fraction, row: _Row) -> float:
    """token * factor rounded once to the nearest float."""
    try:
        value = float(token)
    except ValueError:
        raise MalformedLine(row.section, row.line, row.text, f"'{token}' is not a number")
    if factor == 1:
        return value
    try:
        return float(Fraction(token) * factor)
    except ValueError:  # inf, nan
        return value * float(factor)


def _scaled(row: _Row, index: int, factor: Fraction) -> float:
    return _convert(row.tokens[index], factor, row)


def _arity(row: _Row, low: int, high: int):
    if not low <= len(row.tokens) <= high:
        expected = f"{low}" if low == high else f"{low}-{high}"
        raise MalformedLine(row.section, row.line, row.text,
                            f"expected {expected} fields, got {len(row.tokens)}")


def parse_duration(tokens: List[str]) -> float:
    """Parse an EPANET time value (``h:mm[:ss]`` or number with optional unit) to seconds."""
    if not tokens:
        raise ValueError("empty time value")
    value = tokens[0]
    if ":" in value:
        parts = [float(p) for p in value.split(":")]
        seconds = parts[0] * 3600.0 + parts[1] * 60.0 + (parts[2] if len(parts) > 2 else 0.0)
        unit = tokens[1].upper() if len(tokens) > 1 else ""
    else:
        unit = tokens[1].upper() if len(tokens) > 1 else "HOURS"
        if unit in ("AM", "PM"):
            seconds = float(value) * 3600.0
        else:
            if unit not in _TIME_UNITS:
                raise ValueError(f"unknown time unit '{tokens[1]}'")
            return float(value) * _TIME_UNITS[unit]
    if unit in ("AM", "PM"):
        hours = seconds / 3600.0
        if hours >= 12.0:
            hours -= 12.0
        if unit == "PM":
            hours += 12.0
        seconds = hours * 3600.0
    return seconds


class _UnitSystem:
    def __init__(self, flow_units: str):
        self.flow = FLOW_UNITS[flow_units]
        us = flow_units in US_UNITS
        self.length = FOOT if us else Fraction(1)
        self.diameter = INCH if us else Fraction(1, 1000)
        self.pressure = PSI_TO_M if us else Fraction(1)
        self.dw_roughness = FOOT / 1000 if us else Fraction(1, 1000)


def _resolve(owner, reference, known, row):
    if reference not in known:
        close = get_close_matches(reference, list(known), n=1, cutoff=0.6)
        raise UnresolvedReference(owner, reference, row.line if row else None,
                                  close[0] if close else None)


def _parse_options(rows: List[_Row], options: Options, warnings: List[Diagnostic]):
    for row in rows:
        key = row.tokens[0].upper()
        if len(row.tokens) < 2:
            raise MalformedLine(row.section, row.line, row.text, "option without value")
        value = row.tokens[1].upper()
        if key == "UNITS":
            if value not in FLOW_UNITS:
                raise UnsupportedUnits(row.tokens[1], list(FLOW_UNITS))
            options.flow_units = value
        elif key == "HEADLOSS":
            if value in ("H-W", "HW"):
                options.headloss_model = "HW"
            elif value in ("D-W", "DW"):
                options.headloss_model = "DW"
            else:
                raise UnsupportedFeature(f"headloss formula {row.tokens[1]}", line=row.line)
        elif key == "PATTERN":
            options.default_pattern = row.tokens[1]
        else:
            warnings.append(Diagnostic("warning", "IgnoredOption", key,
                                       f"option '{row.text}' ignored", row.line))


def _parse_times(rows: List[_Row], options: Options, warnings: List[Diagnostic]):
    for row in rows:
        words = [t.upper() for t in row.tokens]
        try:
            if words[0] == "DURATION":
                options.duration = parse_duration(row.tokens[1:])
            elif words[:2] == ["HYDRAULIC", "TIMESTEP"]:
                options.hydraulic_step = parse_duration(row.tokens[2:])
            elif words[:2] == ["PATTERN", "TIMESTEP"]:
                options.pattern_step = parse_duration(row.tokens[2:])
            else:
                warnings.append(Diagnostic("warning", "IgnoredTime", words[0],
                                           f"time setting '{row.text}' ignored", row.line))
        except (ValueError, IndexError) as e:
            raise MalformedLine(row.section, row.line, row.text, str(e))


def _parse_controls(rows, links, scales, warnings) -> List[Control]:
    controls = []
    for row in rows:
        words = [t.upper() for t in row.tokens]
        if "IF" in words:
            warnings.append(Diagnostic("warning", "RuleControlSkipped", None,
                                       f"condition-based control '{row.text}' skipped", row.line))
            continue
        if len(words) < 6 or words[0] != "LINK" or words[3] != "AT" or words[4] not in ("TIME", "CLOCKTIME"):
            raise MalformedLine(row.section, row.line, row.text,
                                "expected 'LINK id value AT TIME t'")
        link_id = row.tokens[1]
        _resolve(f"control at line {row.line}", link_id, links, row)
        try:
            time = parse_duration(row.tokens[5:])
        except ValueError as e:
            raise MalformedLine(row.section, row.line, row.text, str(e))
        controls.append(_control_value(row, link_id, time, row.tokens[2], links[link_id],
                                       scales.get(link_id, Fraction(1))))
    return controls


def _control_value(row, link_id, time, token, link_class, scale) -> Control:
    word = token.upper()
    if word in ("OPEN", "CLOSED"):
        return Control(time, link_id, "status", word.lower())
    if word == "ACTIVE":
        return Control(time, link_id, "status", "active")
    try:
        float(token)
    except ValueError:
        raise MalformedLine(row.section, row.line, row.text, f"bad control value '{token}'")
    if link_class == "pump":
        return Control(time, link_id, "speed", float(token))
    return Control(time, link_id, "setting", _convert(token, scale, row))


def parse_inp(text: str) -> NetworkDescription:
    """
    Parse INP text into an SI-normalized NetworkDescription.

    Args:
        text: Contents of an ``.INP`` file

    Returns:
        NetworkDescription: Resolved network; skipped sections and ignored
        entries are listed in ``warnings``

    Raises:
        MissingSection, MalformedLine, UnresolvedReference,
        UnsupportedUnits, UnsupportedFeature
    """
    sections, warnings, passthrough = _sectionize(text)
    net = NetworkDescription(warnings=warnings, passthrough=passthrough)

    _parse_options(sections.get("OPTIONS", []), net.options, warnings)
    _parse_times(sections.get("TIMES", []), net.options, warnings)
    units = _UnitSystem(net.options.flow_units)
    net.provenance = {"flow_units": net.options.flow_units,
                      "unit_system": "US" if net.options.flow_units in US_UNITS else "SI"}
    net.title = " ".join(r.text for r in sections.get("TITLE", []))

    for row in sections.get("JUNCTIONS", []):
        _arity(row, 2, 4)
        demand = _scaled(row, 2, units.flow) if len(row.tokens) > 2 else 0.0
        pattern = row.tokens[3] if len(row.tokens) > 3 else None
        net.junctions.append(Junction(row.tokens[0], _scaled(row, 1, units.length), demand, pattern))

    for row in sections.get("RESERVOIRS", []):
        _arity(row, 2, 3)
        if len(row.tokens) == 3:
            warnings.append(Diagnostic("warning", "IgnoredPattern", row.tokens[0],
                                       "reservoir head pattern ignored; heads are fixed", row.line))
        net.reservoirs.append(Reservoir(row.tokens[0], _scaled(row, 1, units.length)))

    for row in sections.get("TANKS", []):
        _arity(row, 6, 8)
        if len(row.tokens) == 8 and row.tokens[7] != "*":
            warnings.append(Diagnostic("warning", "IgnoredVolumeCurve", row.tokens[0],
                                       "tank volume curve ignored; cylindrical tank assumed", row.line))
        values = [_scaled(row, i, units.length) for i in range(1, 6)]
        net.tanks.append(Tank(row.tokens[0], *values))

    if not net.junctions and not net.tanks and not net.reservoirs:
        raise MissingSection("nodes")
    nodes = set(net.node_ids)

    for row in sections.get("CURVES", []):
        _arity(row, 3, 3)
        net.curves.setdefault(row.tokens[0], []).append(
            (_scaled(row, 1, units.flow), _scaled(row, 2, units.length)))

    for row in sections.get("PATTERNS", []):
        if len(row.tokens) < 2:
            raise MalformedLine(row.section, row.line, row.text, "pattern without multipliers")
        net.patterns.setdefault(row.tokens[0], []).extend(
            _number(row, i) for i in range(1, len(row.tokens)))

    for row in sections.get("PIPES", []):
        _arity(row, 6, 8)
        pipe_id, a, b = row.tokens[:3]
        _resolve(pipe_id, a, nodes, row)
        _resolve(pipe_id, b, nodes, row)
        status = row.tokens[7].upper() if len(row.tokens) > 7 else "OPEN"
        if status == "CV":
            warnings.append(Diagnostic("warning", "CheckValveIgnored", pipe_id,
                                       "check valve treated as an open pipe", row.line))
            status = "OPEN"
        if status not in ("OPEN", "CLOSED"):
            raise MalformedLine(row.section, row.line, row.text, f"unknown pipe status '{status}'")
        roughness = _scaled(row, 5, units.dw_roughness if net.options.headloss_model == "DW" else 1)
        net.pipes.append(Pipe(
            pipe_id, a, b,
            length=_scaled(row, 3, units.length),
            diameter=_scaled(row, 4, units.diameter),
            roughness=roughness,
            minor_loss=_number(row, 6) if len(row.tokens) > 6 else 0.0,
            initial_status=status.lower(),
        ))

    for row in sections.get("PUMPS", []):
        if len(row.tokens) < 5 or (len(row.tokens) - 3) % 2:
            raise MalformedLine(row.section, row.line, row.text, "expected 'id from to KEYWORD value ...'")
        pump_id, a, b = row.tokens[:3]
        _resolve(pump_id, a, nodes, row)
        _resolve(pump_id, b, nodes, row)
        curve_id, speed = None, 1.0
        for key, value in zip(row.tokens[3::2], row.tokens[4::2]):
            key = key.upper()
            if key == "HEAD":
                curve_id = value
            elif key == "SPEED":
                try:
                    speed = float(value)
                except ValueError:
                    raise MalformedLine(row.section, row.line, row.text, f"bad pump speed '{value}'")
            elif key == "POWER":
                raise UnsupportedFeature("constant-power pump", pump_id, row.line)
            elif key == "PATTERN":
                warnings.append(Diagnostic("warning", "IgnoredPattern", pump_id,
                                           "pump speed pattern ignored; use [CONTROLS]", row.line))
            else:
                raise MalformedLine(row.section, row.line, row.text, f"unknown pump keyword '{key}'")
        if curve_id is None:
            raise UnsupportedFeature("pump without HEAD curve", pump_id, row.line)
        _resolve(pump_id, curve_id, net.curves, row)
        net.pumps.append(Pump(pump_id, a, b, curve_id, speed))

    for row in sections.get("VALVES", []):
        _arity(row, 6, 7)
        valve_id, a, b = row.tokens[:3]
        _resolve(valve_id, a, nodes, row)
        _resolve(valve_id, b, nodes, row)
        kind = row.tokens[4].upper()
        if kind not in VALVE_KINDS:
            raise MalformedLine(row.section, row.line, row.text, f"unknown valve type '{kind}'")
        curve_id, setting = None, 0.0
        if kind == "GPV":
            curve_id = row.tokens[5]
            _resolve(valve_id, curve_id, net.curves, row)
        else:
            setting = _scaled(row, 5, _setting_scale(kind, units))
        net.valves.append(Valve(
            valve_id, a, b,
            diameter=_scaled(row, 3, units.diameter),
            kind=kind,
            setting=setting,
            minor_loss=_number(row, 6) if len(row.tokens) > 6 else 0.0,
            status="active" if kind in REGULATING_KINDS else "open",
            curve_id=curve_id,
        ))

    if not net.link_ids:
        raise MissingSection("links")

    links = {p.id: "pipe" for p in net.pipes}
    links.update({m.id: "pump" for m in net.pumps})
    links.update({v.id: "valve" for v in net.valves})

    demand_rows = sections.get("DEMANDS", [])
    if demand_rows:
        junctions = {j.id: j for j in net.junctions}
        overridden = set()
        for row in demand_rows:
            _arity(row, 2, 4)
            _resolve("[DEMANDS]", row.tokens[0], junctions, row)
            junction = junctions[row.tokens[0]]
            if junction.id not in overridden:
                junction.base_demand, junction.pattern_id = 0.0, None
                overridden.add(junction.id)
            junction.base_demand += _scaled(row, 1, units.flow)
            if len(row.tokens) > 2 and junction.pattern_id is None:
                junction.pattern_id = row.tokens[2]

    for junction in net.junctions:
        if junction.pattern_id is not None:
            _resolve(junction.id, junction.pattern_id, net.patterns, None)

    for row in sections.get("STATUS", []):
        _arity(row, 2, 2)
        _resolve("[STATUS]", row.tokens[0], links, row)
        _apply_status(net, row, links[row.tokens[0]], units)

    scales = {v.id: _setting_scale(v.kind, units) for v in net.valves}
    controls = _parse_controls(sections.get("CONTROLS", []), links, scales, warnings)
    net.controls = sorted(controls, key=lambda c: c.time)
    logger.info(f"[OK] Parsed network: {net.counts()}")
    return net


def _setting_scale(kind: str, units: _UnitSystem) -> Fraction:
    """SI factor for a valve setting: head for PRV/PSV/PBV, flow for FCV."""
    if kind in ("PRV", "PSV", "PBV"):
        return units.pressure
    if kind == "FCV":
        return units.flow
    return Fraction(1)


def _apply_status(net: NetworkDescription, row: _Row, link_class: str, units: _UnitSystem):
    link_id, token = row.tokens
    word = token.upper()
    if link_class == "pipe":
        pipe = next(p for p in net.pipes if p.id == link_id)
        if word not in ("OPEN", "CLOSED"):
            raise MalformedLine(row.section, row.line, row.text, "pipe status must be OPEN or CLOSED")
        pipe.initial_status = word.lower()
    elif link_class == "pump":
        pump = next(m for m in net.pumps if m.id == link_id)
        if word in ("OPEN", "CLOSED"):
            pump.initial_status = word.lower()
        else:
            pump.speed = _number(row, 1)
    else:
        valve = next(v for v in net.valves if v.id == link_id)
        if word in ("OPEN", "CLOSED", "ACTIVE"):
            valve.status = word.lower()
        else:
            valve.setting = _scaled(row, 1, _setting_scale(valve.kind, units))


def parse_inp_file(path: str) -> NetworkDescription:
    """Read and parse an ``.INP`` file."""
    with open(path, "r", encoding="utf-8") as f:
        return parse_inp(f.read())


def validate(net: NetworkDescription) -> List[Diagnostic]:
    """
    Check the NetworkDescription invariants.

    Returns:
        list: One Diagnostic per violated invariant, empty when all hold
    """
    diagnostics: List[Diagnostic] = []
    nodes = set(net.node_ids)

    # nodes and links are separate id namespaces
    for ids in (net.node_ids, net.link_ids):
        seen = set()
        for element_id in ids:
            if element_id in seen:
                diagnostics.append(Diagnostic("error", "DuplicateId", element_id,
                                              f"id '{element_id}' declared more than once"))
            seen.add(element_id)

    for link in list(net.pipes) + list(net.pumps) + list(net.valves):
        for end in (link.from_node, link.to_node):
            if end not in nodes:
                diagnostics.append(Diagnostic("error", "UnresolvedReference", link.id,
                                              f"link '{link.id}' references undeclared node '{end}'"))
        if link.from_node == link.to_node:
            diagnostics.append(Diagnostic("error", "SelfLoop", link.id,
                                          f"link '{link.id}' starts and ends at '{link.from_node}'"))

    for pump in net.pumps:
        if pump.curve_id not in net.curves:
            diagnostics.append(Diagnostic("error", "UnresolvedReference", pump.id,
                                          f"pump '{pump.id}' references undeclared curve '{pump.curve_id}'"))
        if pump.speed < 0:
            diagnostics.append(Diagnostic("error", "NegativeSpeed", pump.id,
                                          f"pump '{pump.id}' has negative speed {pump.speed}"))

    for junction in net.junctions:
        if junction.pattern_id is not None and junction.pattern_id not in net.patterns:
            diagnostics.append(Diagnostic("error", "UnresolvedReference", junction.id,
                                          f"junction '{junction.id}' references undeclared pattern '{junction.pattern_id}'"))

    for tank in net.tanks:
        if not tank.max_level >= tank.init_level >= tank.min_level >= 0.0:
            diagnostics.append(Diagnostic("error", "TankLevelOrder", tank.id,
                                          f"tank '{tank.id}' needs max >= init >= min >= 0 "
                                          f"(got {tank.max_level}, {tank.init_level}, {tank.min_level})"))
        if tank.diameter <= 0.0:
            diagnostics.append(Diagnostic("error", "DegenerateGeometry", tank.id,
                                          f"tank '{tank.id}' diameter must be positive"))

    for pipe in net.pipes:
        if pipe.length <= 0.0 or pipe.diameter <= 0.0:
            diagnostics.append(Diagnostic("error", "DegenerateGeometry", pipe.id,
                                          f"pipe '{pipe.id}' length and diameter must be positive"))
    for valve in net.valves:
        if valve.diameter <= 0.0:
            diagnostics.append(Diagnostic("error", "DegenerateGeometry", valve.id,
                                          f"valve '{valve.id}' diameter must be positive"))

    if not net.reservoirs and not net.tanks:
        diagnostics.append(Diagnostic("error", "NoHeadAnchor", None,
                                      "network needs at least one reservoir or tank"))
    return diagnostics


def _fmt(value: float, factor: Fraction = Fraction(1)) -> str:
    """Shortest decimal in source units that parses back to exactly ``value``."""
    value = float(value)
    if factor == 1 or value != value or value in (float("inf"), float("-inf")):
        return repr(value)
    exact = Fraction(value) / factor
    for digits in range(1, 40):
        with localcontext() as ctx:
            ctx.prec = digits
            text = format(Decimal(exact.numerator) / Decimal(exact.denominator), "f")
        if float(Fraction(text) * factor) == value:
            return text
    return repr(float(exact))


def write_inp(net: NetworkDescription) -> str:
    """
    Serialize to canonical INP text in the network's own flow units.

    Re-parsing the output gives back an equal NetworkDescription.
    """
    units = _UnitSystem(net.options.flow_units)
    out = ["[TITLE]", net.title, "", "[OPTIONS]",
           f"UNITS {net.options.flow_units}",
           f"HEADLOSS {'H-W' if net.options.headloss_model == 'HW' else 'D-W'}"]
    if net.options.default_pattern:
        out.append(f"PATTERN {net.options.default_pattern}")
    out += ["", "[TIMES]",
            f"DURATION {_fmt(net.options.duration)} SEC",
            f"HYDRAULIC TIMESTEP {_fmt(net.options.hydraulic_step)} SEC",
            f"PATTERN TIMESTEP {_fmt(net.options.pattern_step)} SEC", "", "[JUNCTIONS]"]
    for j in net.junctions:
        row = f"{j.id} {_fmt(j.elevation, units.length)} {_fmt(j.base_demand, units.flow)}"
        out.append(row + (f" {j.pattern_id}" if j.pattern_id else ""))
    out += ["", "[RESERVOIRS]"]
    out += [f"{r.id} {_fmt(r.head, units.length)}" for r in net.reservoirs]
    out += ["", "[TANKS]"]
    out += [" ".join([t.id] + [_fmt(x, units.length) for x in
                               (t.elevation, t.init_level, t.min_level, t.max_level, t.diameter)])
            for t in net.tanks]
    out += ["", "[PIPES]"]
    rough_scale = units.dw_roughness if net.options.headloss_model == "DW" else Fraction(1)
    for p in net.pipes:
        out.append(f"{p.id} {p.from_node} {p.to_node} {_fmt(p.length, units.length)} "
                   f"{_fmt(p.diameter, units.diameter)} {_fmt(p.roughness, rough_scale)} "
                   f"{_fmt(p.minor_loss)} {p.initial_status.upper()}")
    out += ["", "[PUMPS]"]
    out += [f"{m.id} {m.from_node} {m.to_node} HEAD {m.curve_id} SPEED {_fmt(m.speed)}" for m in net.pumps]
    out += ["", "[VALVES]"]
    scales = {v.id: _setting_scale(v.kind, units) for v in net.valves}
    for v in net.valves:
        setting = v.curve_id if v.kind == "GPV" else _fmt(v.setting, scales[v.id])
        out.append(f"{v.id} {v.from_node} {v.to_node} {_fmt(v.diameter, units.diameter)} "
                   f"{v.kind} {setting} {_fmt(v.minor_loss)}")
    out += ["", "[STATUS]"]
    for m in net.pumps:
        if m.initial_status == "closed":
            out.append(f"{m.id} CLOSED")
    for v in net.valves:
        default = "active" if v.kind in REGULATING_KINDS else "open"
        if v.status != default:
            out.append(f"{v.id} {v.status.upper()}")
    out += ["", "[CURVES]"]
    for curve_id, points in net.curves.items():
        out += [f"{curve_id} {_fmt(q, units.flow)} {_fmt(h, units.length)}" for q, h in points]
    out += ["", "[PATTERNS]"]
    for pattern_id, multipliers in net.patterns.items():
        out.append(" ".join([pattern_id] + [_fmt(m) for m in multipliers]))
    out += ["", "[CONTROLS]"]
    for c in net.controls:
        if c.attribute == "status":
            value = str(c.value).upper()
        else:
            value = _fmt(c.value, scales.get(c.link_id, Fraction(1)))
        out.append(f"LINK {c.link_id} {value} AT TIME {_fmt(c.time)} SEC")
    for name, lines in net.passthrough.items():
        out += ["", f"[{name}]"] + lines
    out += ["", "[END]", ""]
    return "\n".join(out)
