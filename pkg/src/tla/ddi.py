"""Digital Dependability Identity contracts: XML parsing and accept/reject.

The dialect is small and closed; any tag outside it is a schema error. Text
values are whitespace-normalized (runs of whitespace collapse to one space).
"""

from __future__ import annotations

import enum
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from xml.sax.saxutils import escape


class DdiError(ValueError):
    pass


class DdiParseError(DdiError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


class DdiSchemaError(DdiError):
    def __init__(self, message: str, tag: str | None = None):
        self.tag = tag
        super().__init__(message)


class IntegrityLevel(enum.IntEnum):
    QM = 0
    A = 1
    B = 2
    C = 3
    D = 4

    @classmethod
    def parse(cls, token: str) -> "IntegrityLevel":
        try:
            return cls[token.strip().upper()]
        except KeyError:
            raise DdiSchemaError(f"unknown integrity level {token!r}", "IntegrityLevel") from None


CONFIGURATION = "configuration"
PLATFORM_SERVICE = "platform_service"
HEALTH_MONITORING = "health_monitoring"


@dataclass(frozen=True)
class Demand:
    kind: str
    name: str
    integrity_level: IntegrityLevel
    # kind-specific raw text, e.g. ("reaction", "detected"), ("error", "3 %")
    extra: tuple[tuple[str, str], ...] = ()

    def get(self, key: str) -> str:
        return dict(self.extra)[key]

    @property
    def error_percent(self) -> float:
        return parse_percent(self.get("error"))

    @property
    def latency_ms(self) -> float:
        return parse_latency(self.get("latency"))


@dataclass(frozen=True)
class Guarantee:
    configuration_name: str
    integrity_level: IntegrityLevel
    security_property: int
    demands: tuple[Demand, ...] = ()


@dataclass(frozen=True)
class DdiContract:
    component_name: str
    guarantee: Guarantee

    @property
    def demands(self) -> tuple[Demand, ...]:
        return self.guarantee.demands


_PERCENT = re.compile(r"^(\d+(?:\.\d+)?)\s*%$")
_LATENCY = re.compile(r"^(?:more than\s+)?(\d+(?:\.\d+)?)\s*ms$", re.IGNORECASE)


def parse_percent(text: str) -> float:
    m = _PERCENT.match(text.strip())
    if not m:
        raise DdiSchemaError(f"malformed error percentage {text!r}", "Error")
    return float(m.group(1))


def parse_latency(text: str) -> float:
    """Latency threshold in ms; 'more than 10 ms' reads as a 10 ms failure threshold."""
    m = _LATENCY.match(text.strip())
    if not m:
        raise DdiSchemaError(f"malformed latency {text!r}", "Latency")
    return float(m.group(1))


def _norm(text: str | None) -> str:
    return " ".join((text or "").split())


def _children(elem: ET.Element, allowed: tuple[str, ...], required: tuple[str, ...] = ()) -> dict[str, ET.Element]:
    if elem.attrib:
        raise DdiSchemaError(f"<{elem.tag}> takes no attributes", elem.tag)
    if _norm(elem.text) or any(_norm(c.tail) for c in elem):
        raise DdiSchemaError(f"<{elem.tag}> must not contain text", elem.tag)
    found: dict[str, ET.Element] = {}
    for child in elem:
        if child.tag not in allowed:
            raise DdiSchemaError(f"unknown tag <{child.tag}> inside <{elem.tag}>", child.tag)
        if child.tag in found:
            raise DdiSchemaError(f"duplicate <{child.tag}> inside <{elem.tag}>", child.tag)
        found[child.tag] = child
    for tag in required:
        if tag not in found:
            raise DdiSchemaError(f"missing required <{tag}> inside <{elem.tag}>", tag)
    return found


def _text(elem: ET.Element) -> str:
    if elem.attrib or len(elem):
        raise DdiSchemaError(f"<{elem.tag}> must hold plain text", elem.tag)
    value = _norm(elem.text)
    if not value:
        raise DdiSchemaError(f"<{elem.tag}> is empty", elem.tag)
    return value


def _demand(elem: ET.Element) -> Demand:
    kids = _children(elem, ("ConfigurationName", "IntegrityLevel", "Platform_Service", "HealthMonitoring"))
    if "Platform_Service" in kids:
        if len(kids) != 1:
            raise DdiSchemaError("<Platform_Service> must be the only child of <Demand>", "Demand")
        ps = _children(kids["Platform_Service"], ("Failure", "Reaction", "IntegrityLevel", "Error"),
                       ("Failure", "Reaction", "IntegrityLevel", "Error"))
        error = _text(ps["Error"])
        parse_percent(error)
        return Demand(PLATFORM_SERVICE, _text(ps["Failure"]), IntegrityLevel.parse(_text(ps["IntegrityLevel"])),
                      (("reaction", _text(ps["Reaction"])), ("error", error)))
    if "HealthMonitoring" in kids:
        if len(kids) != 1:
            raise DdiSchemaError("<HealthMonitoring> must be the only child of <Demand>", "Demand")
        hm = _children(kids["HealthMonitoring"], ("Failure", "IntegrityLevel"), ("Failure", "IntegrityLevel"))
        fail = _children(hm["Failure"], ("Application", "ApplicationResourceName", "Latency"),
                         ("Application", "ApplicationResourceName", "Latency"))
        latency = _text(fail["Latency"])
        parse_latency(latency)
        return Demand(HEALTH_MONITORING, _text(fail["ApplicationResourceName"]),
                      IntegrityLevel.parse(_text(hm["IntegrityLevel"])),
                      (("application", _text(fail["Application"])), ("latency", latency)))
    for tag in ("ConfigurationName", "IntegrityLevel"):
        if tag not in kids:
            raise DdiSchemaError(f"missing required <{tag}> inside <Demand>", tag)
    return Demand(CONFIGURATION, _text(kids["ConfigurationName"]),
                  IntegrityLevel.parse(_text(kids["IntegrityLevel"])))


def parse_ddi(document: str | bytes) -> DdiContract:
    """Parse one ``<DDI>`` document.

    Raises DdiParseError for malformed XML and DdiSchemaError for well-formed
    documents outside the dialect. No other exception escapes.
    """
    if isinstance(document, str) and "<!DOCTYPE" in document.upper() or \
            isinstance(document, bytes) and b"<!DOCTYPE" in document.upper():
        raise DdiParseError("document type declarations are not accepted")
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, col = exc.position
        raise DdiParseError(f"malformed XML: {exc.msg if hasattr(exc, 'msg') else exc}", line, col) from None
    except (ValueError, LookupError, TypeError) as exc:
        raise DdiParseError(f"unreadable document: {exc}") from None
    if root.tag != "DDI":
        raise DdiSchemaError(f"root element must be <DDI>, got <{root.tag}>", root.tag)
    top = _children(root, ("ComponentName", "Guarantee"), ("ComponentName", "Guarantee"))
    g = _children(top["Guarantee"], ("ConfigurationName", "IntegrityLevel", "SecurityProperty", "DemandSet"),
                  ("ConfigurationName", "IntegrityLevel", "SecurityProperty", "DemandSet"))
    sec_text = _text(g["SecurityProperty"])
    if not sec_text.isdigit() or not sec_text.isascii():
        raise DdiSchemaError(f"SecurityProperty must be a non-negative integer, got {sec_text!r}", "SecurityProperty")
    ds = g["DemandSet"]
    if ds.attrib or _norm(ds.text) or any(_norm(c.tail) for c in ds):
        raise DdiSchemaError("<DemandSet> may only contain <Demand> elements", "DemandSet")
    demands = []
    for child in ds:
        if child.tag != "Demand":
            raise DdiSchemaError(f"unknown tag <{child.tag}> inside <DemandSet>", child.tag)
        demands.append(_demand(child))
    guarantee = Guarantee(_text(g["ConfigurationName"]), IntegrityLevel.parse(_text(g["IntegrityLevel"])),
                          int(sec_text), tuple(demands))
    return DdiContract(_text(top["ComponentName"]), guarantee)


def serialize_ddi(contract: DdiContract) -> str:
    def el(tag, value, ind):
        return f"{' ' * ind}<{tag}> {escape(str(value))} </{tag}>"

    g = contract.guarantee
    lines = ["<DDI>", el("ComponentName", contract.component_name, 2), "  <Guarantee>",
             el("ConfigurationName", g.configuration_name, 4), el("IntegrityLevel", g.integrity_level.name, 4),
             el("SecurityProperty", g.security_property, 4), "    <DemandSet>"]
    for d in g.demands:
        lines.append("      <Demand>")
        if d.kind == CONFIGURATION:
            lines += [el("ConfigurationName", d.name, 8), el("IntegrityLevel", d.integrity_level.name, 8)]
        elif d.kind == PLATFORM_SERVICE:
            lines += ["        <Platform_Service>", el("Failure", d.name, 10), el("Reaction", d.get("reaction"), 10),
                      el("IntegrityLevel", d.integrity_level.name, 10), el("Error", d.get("error"), 10),
                      "        </Platform_Service>"]
        else:
            lines += ["        <HealthMonitoring>", "          <Failure>", el("Application", d.get("application"), 12),
                      el("ApplicationResourceName", d.name, 12), el("Latency", d.get("latency"), 12),
                      "          </Failure>", el("IntegrityLevel", d.integrity_level.name, 10),
                      "        </HealthMonitoring>"]
        lines.append("      </Demand>")
    lines += ["    </DemandSet>", "  </Guarantee>", "</DDI>"]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class OfferedConfiguration:
    name: str
    integrity_level: IntegrityLevel


@dataclass(frozen=True)
class PlatformReaction:
    failure: str
    reaction: str
    integrity_level: IntegrityLevel
    max_error_percent: float


@dataclass(frozen=True)
class HealthMonitor:
    application: str
    resource: str
    max_latency_ms: float
    integrity_level: IntegrityLevel


@dataclass(frozen=True)
class CapabilitySet:
    """What the ego platform can provide to satisfy a sender's demands."""

    offered: tuple[OfferedConfiguration, ...] = ()
    platform_reactions: tuple[PlatformReaction, ...] = ()
    health_monitors: tuple[HealthMonitor, ...] = ()

    def __post_init__(self):
        for items, key in ((self.offered, lambda c: c.name),
                           (self.platform_reactions, lambda c: c.failure),
                           (self.health_monitors, lambda c: (c.application, c.resource))):
            keys = [key(c) for c in items]
            if len(keys) != len(set(keys)):
                raise ValueError("capability names must be unique per category")

    @classmethod
    def from_dict(cls, data: dict) -> "CapabilitySet":
        lvl = IntegrityLevel.parse
        return cls(
            tuple(OfferedConfiguration(o["name"], lvl(o["integrity_level"])) for o in data.get("offered", ())),
            tuple(PlatformReaction(p["failure"], p["reaction"], lvl(p["integrity_level"]),
                                   float(p["max_error_percent"])) for p in data.get("platform_reactions", ())),
            tuple(HealthMonitor(h["application"], h["resource"], float(h["max_latency_ms"]),
                                lvl(h["integrity_level"])) for h in data.get("health_monitors", ())),
        )

    def to_dict(self) -> dict:
        return {
            "offered": [{"name": o.name, "integrity_level": o.integrity_level.name} for o in self.offered],
            "platform_reactions": [{"failure": p.failure, "reaction": p.reaction,
                                    "integrity_level": p.integrity_level.name,
                                    "max_error_percent": p.max_error_percent} for p in self.platform_reactions],
            "health_monitors": [{"application": h.application, "resource": h.resource,
                                 "max_latency_ms": h.max_latency_ms, "integrity_level": h.integrity_level.name}
                                for h in self.health_monitors],
        }


@dataclass(frozen=True)
class Evaluation:
    unmet: tuple[Demand, ...] = ()

    @property
    def accepted(self) -> bool:
        return not self.unmet


def _satisfied(demand: Demand, caps: CapabilitySet) -> bool:
    if demand.kind == CONFIGURATION:
        return any(c.name == demand.name and c.integrity_level >= demand.integrity_level for c in caps.offered)
    if demand.kind == PLATFORM_SERVICE:
        return any(c.failure == demand.name and c.reaction == demand.get("reaction")
                   and c.integrity_level >= demand.integrity_level
                   and c.max_error_percent <= demand.error_percent for c in caps.platform_reactions)
    # the monitor must flag latencies above the demanded threshold
    return any(c.resource == demand.name and c.application == demand.get("application")
               and c.integrity_level >= demand.integrity_level
               and c.max_latency_ms <= demand.latency_ms for c in caps.health_monitors)


def evaluate(contract: DdiContract, capabilities: CapabilitySet) -> Evaluation:
    return Evaluation(tuple(d for d in contract.demands if not _satisfied(d, capabilities)))


@dataclass(frozen=True)
class GateDecision:
    passed: bool
    reason: str = ""
    unmet: tuple[Demand, ...] = field(default=())


def gate_message(message, capabilities: CapabilitySet, strict: bool = True) -> GateDecision:
    contract = getattr(message, "ddi", None)
    if contract is None:
        return GateDecision(True, "no contract (permissive)") if not strict else GateDecision(False, "no contract")
    result = evaluate(contract, capabilities)
    if result.accepted:
        return GateDecision(True)
    names = ", ".join(f"{d.kind}:{d.name}@{d.integrity_level.name}" for d in result.unmet)
    return GateDecision(False, f"unmet demands: {names}", result.unmet)
