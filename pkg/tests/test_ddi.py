import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import fuzz_inputs, raise_one_level, random_contract_and_caps
from tla.ddi import (CONFIGURATION, HEALTH_MONITORING, PLATFORM_SERVICE, CapabilitySet, DdiError, DdiParseError,
                     DdiSchemaError, HealthMonitor, IntegrityLevel, OfferedConfiguration, PlatformReaction, evaluate,
                     gate_message, parse_ddi, parse_latency, serialize_ddi)
from tla.scenario import bundled
from tla.world import SPAT, V2xMessage
from tla.constraints import PhaseSchedule

CORNER = bundled("corner_steering_ddi.xml").read_bytes()
EMPTY = b"""<DDI><ComponentName>x</ComponentName><Guarantee><ConfigurationName>c</ConfigurationName>
<IntegrityLevel>QM</IntegrityLevel><SecurityProperty>0</SecurityProperty><DemandSet/></Guarantee></DDI>"""


def test_corner_steering_contract_fields():
    c = parse_ddi(CORNER)
    assert c.component_name == "Cloud-based Corner Steering Service"
    assert c.guarantee.configuration_name == "CornerSteering"
    assert c.guarantee.integrity_level == IntegrityLevel.D
    assert c.guarantee.security_property == 3
    assert [d.integrity_level.name for d in c.demands] == ["D", "D", "B", "D", "D"]
    assert [d.kind for d in c.demands] == [CONFIGURATION] * 3 + [PLATFORM_SERVICE, HEALTH_MONITORING]
    assert [d.name for d in c.demands[:3]] == ["acceleration", "Lane Keep Assistant", "emSpeed"]
    ps, hm = c.demands[3], c.demands[4]
    assert ps.name == "Lane Keep Assistant Failure" and ps.get("reaction") == "detected" and ps.error_percent == 3.0
    assert hm.name == "Lane Keep Assistant" and hm.get("application") == "Application Runtime Failure"
    assert hm.latency_ms == 10.0


def test_empty_demand_set():
    c = parse_ddi(EMPTY)
    assert c.demands == ()
    assert evaluate(c, CapabilitySet()).accepted


def test_level_order():
    assert IntegrityLevel.QM < IntegrityLevel.A < IntegrityLevel.B < IntegrityLevel.C < IntegrityLevel.D
    with pytest.raises(DdiSchemaError):
        IntegrityLevel.parse("E")


def test_round_trip_reference_and_random():
    c = parse_ddi(CORNER)
    assert parse_ddi(serialize_ddi(c)) == c
    rng = np.random.default_rng(9)
    for _ in range(200):
        contract, _ = random_contract_and_caps(rng)
        assert parse_ddi(serialize_ddi(contract)) == contract


@pytest.mark.parametrize("doc,err,tag", [
    (b"<DDI><ComponentName>x</ComponentName></DDI>", DdiSchemaError, "Guarantee"),
    (CORNER.replace(b"<IntegrityLevel> B </IntegrityLevel>", b"<IntegrityLevel> Z </IntegrityLevel>"),
     DdiSchemaError, "IntegrityLevel"),
    (CORNER.replace(b"<Reaction>", b"<Colour>red</Colour><Reaction>"), DdiSchemaError, "Colour"),
    (b"<Other/>", DdiSchemaError, "Other"),
])
def test_schema_errors_name_the_tag(doc, err, tag):
    with pytest.raises(err) as exc:
        parse_ddi(doc)
    assert exc.value.tag == tag


def test_parse_error_has_position():
    with pytest.raises(DdiParseError) as exc:
        parse_ddi(b"<DDI>\n<ComponentName>x</DDI>")
    assert exc.value.line == 2
    with pytest.raises(DdiParseError):
        parse_ddi(b'<!DOCTYPE d [<!ENTITY a "aaaa">]><DDI/>')


def test_latency_reading():
    assert parse_latency("more than 10 ms") == 10.0
    assert parse_latency("25 ms") == 25.0
    with pytest.raises(DdiSchemaError):
        parse_latency("soon")


FULL = CapabilitySet(
    (OfferedConfiguration("acceleration", IntegrityLevel.D), OfferedConfiguration("Lane Keep Assistant", IntegrityLevel.D),
     OfferedConfiguration("emSpeed", IntegrityLevel.D)),
    (PlatformReaction("Lane Keep Assistant Failure", "detected", IntegrityLevel.D, 1.0),),
    (HealthMonitor("Application Runtime Failure", "Lane Keep Assistant", 5.0, IntegrityLevel.D),),
)


def test_evaluate_examples():
    c = parse_ddi(CORNER)
    assert evaluate(c, FULL).accepted
    # emSpeed is demanded at B; offering D satisfies it
    assert all(d.name != "emSpeed" for d in evaluate(c, FULL).unmet)
    weak = CapabilitySet((OfferedConfiguration("acceleration", IntegrityLevel.B),) + FULL.offered[1:],
                         FULL.platform_reactions, FULL.health_monitors)
    unmet = evaluate(c, weak).unmet
    assert [d.name for d in unmet] == ["acceleration"]
    slow = CapabilitySet(FULL.offered, FULL.platform_reactions,
                         (HealthMonitor("Application Runtime Failure", "Lane Keep Assistant", 20.0, IntegrityLevel.D),))
    assert [d.kind for d in evaluate(c, slow).unmet] == [HEALTH_MONITORING]
    lossy = CapabilitySet(FULL.offered, (PlatformReaction("Lane Keep Assistant Failure", "detected",
                                                          IntegrityLevel.D, 5.0),), FULL.health_monitors)
    assert [d.kind for d in evaluate(c, lossy).unmet] == [PLATFORM_SERVICE]
    assert len(evaluate(c, CapabilitySet()).unmet) == 5


def test_evaluate_monotone_random():
    rng = np.random.default_rng(21)
    for _ in range(300):
        contract, caps = random_contract_and_caps(rng)
        before = evaluate(contract, caps)
        after = evaluate(contract, raise_one_level(caps, rng))
        if before.accepted:
            assert after.accepted
        assert set(after.unmet) <= set(before.unmet)


def test_capability_names_unique():
    with pytest.raises(ValueError):
        CapabilitySet((OfferedConfiguration("a", IntegrityLevel.A), OfferedConfiguration("a", IntegrityLevel.B)))
    assert CapabilitySet.from_dict(FULL.to_dict()) == FULL


def test_gate_modes():
    c = parse_ddi(CORNER)
    msg = V2xMessage(SPAT, "tl", 100.0, PhaseSchedule(100.0), c, 0.0)
    assert gate_message(msg, FULL).passed
    d = gate_message(msg, CapabilitySet())
    assert not d.passed and len(d.unmet) == 5 and "unmet" in d.reason
    bare = V2xMessage(SPAT, "tl", 100.0, PhaseSchedule(100.0), None, 0.0)
    assert not gate_message(bare, FULL, strict=True).passed
    assert gate_message(bare, FULL, strict=False).passed


def test_fuzz_smoke():
    for data in fuzz_inputs(0, 5000, CORNER):
        try:
            parse_ddi(data)
        except DdiError:
            pass


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=200))
def test_parser_total_on_text(text):
    try:
        parse_ddi(text)
    except DdiError:
        pass
