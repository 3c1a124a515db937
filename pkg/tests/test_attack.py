from __future__ import annotations

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from hpsec.ast import AssignAny, expand, flatten_seq
from hpsec.attack import NotASensor, SensorInPlant, attack, attack_model, is_attack_invariant
from hpsec.syntax import parse_program, print_model
from hpsec.vars import bv

from strategies import NAMES, programs


def test_vehicle_sensing_first_statement(load):
    m = load("vehicle_sensing.hp")
    attacked, spec = attack_model(m, {"v_s"})
    ctrl = next(d for d in attacked.definitions if d.name == "ctrl")
    assert flatten_seq(ctrl.body)[0] == AssignAny("v_s")
    assert spec.sensors == {"v_s"} and len(spec.provenance["v_s"]) == 1
    before = print_model(m).replace("v_s := v_p", "v_s := *")
    assert "".join(before.split()) == "".join(print_model(attacked).split())


def test_not_a_sensor():
    with pytest.raises(NotASensor):
        attack(parse_program("x := 1"), {"y"})


def test_sensor_in_plant():
    with pytest.raises(SensorInPlant):
        attack(parse_program("x := 1; {x' = 1}"), {"x"})


def test_attack_invariant():
    p = parse_program("x := *; y := 1")
    assert is_attack_invariant(p, {"x"})
    assert not is_attack_invariant(p, {"y"})


@settings(max_examples=300, deadline=None, suppress_health_check=list(HealthCheck))
@given(programs, st.sets(st.sampled_from(NAMES), max_size=3))
def test_attack_properties(p, sensors):
    from hpsec.ast import ODE, walk

    evolved = {x for n in walk(p) if isinstance(n, ODE) for x in n.variables}
    sensors = frozenset(s for s in sensors if s in bv(p) and s not in evolved)
    once, _ = attack(p, sensors)
    twice, _ = attack(once, sensors)
    assert twice == once
    assert bv(once) == bv(p)
    assert is_attack_invariant(once, sensors)


def test_attack_model_keeps_layout(load):
    m = load("abs_voting.hp")
    attacked, _ = attack_model(m, {"w_s1"})
    assert [d.name for d in attacked.definitions] == [d.name for d in m.definitions]
    assert "w_s1 := *" in print_model(attacked)
    assert expand(attacked.problem, attacked) != expand(m.problem, m)


def test_attack_examples(load):
    m = load("vehicle_sensing.hp")
    p = expand(m.problem, m)
    assert attack(p, set())[0] == p
    with pytest.raises(SensorInPlant):
        attack_model(m, {"v_p"})
    plant = next(d.body for d in m.definitions if d.name == "plant")
    assert is_attack_invariant(plant, {"v_s"})
    voting = load("vehicle_voting.hp")
    assert not is_attack_invariant(expand(voting.problem, voting), {"v_s1"})
    assert is_attack_invariant(parse_program("?x > 0"), {"x"})
