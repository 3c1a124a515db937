from __future__ import annotations

from dataclasses import replace

import pytest

from hpsec.ast import AssignAny, Assign, Compare, Variable, conjuncts, expand, flatten_seq, normalize
from hpsec.sim import NondetPolicy, derive_seed, run, sample_state
from hpsec.syntax import parse_formula, parse_model, print_model
from hpsec.transform import (
    EqSetNotBound, EqSetOverlapsSensors, OdeInCtrl, ShapeError, canonicalize, compose, default_eq_set,
    make_renaming, split_problem, totality_gate,
)
from hpsec.vars import bv

from conftest import VEHICLE_BOUNDS


def _def(model, name):
    return next(d.body for d in model.definitions if d.name == name)


def test_temperature_composition_structure(load):
    canon = canonicalize(load("vehicle_temp.hp"))
    comp = compose(canon, {"temp_s"}, ["v_p", "d_p"])
    m = comp.composed
    assert _def(m, "choices_1") == Assign("c_1", Variable("c"))
    assert len(conjuncts(_def(m, "plantC").domain)) == 4
    assert comp.eq_formula == parse_formula("v_p = v_p_1 & d_p = d_p_1")
    ref = load("vehicle_temp_composed.hp")
    assert normalize(expand(m.problem, m)) == normalize(expand(ref.problem, ref))
    assert parse_model(print_model(m)) == m


def test_bus_composition_structure(load):
    canon = canonicalize(load("bus.hp"))
    comp = compose(canon, {"temp_s"}, ["v_p", "d_p", "a"])
    ref = load("bus_composed.hp")
    m = comp.composed
    assert normalize(expand(m.problem, m)) == normalize(expand(ref.problem, ref))


def test_canonical_form_matches_reference(load):
    canon = canonicalize(load("vehicle_temp.hp"))
    ref = canonicalize(load("vehicle_temp_canonical.hp"))
    assert canon.choice_vars == ("c",)
    assert normalize(canon.body) == normalize(ref.body)
    assert flatten_seq(canon.choices) == [AssignAny("c")]


def test_canonicalize_is_idempotent(load):
    once = canonicalize(load("vehicle_temp.hp"))
    twice = canonicalize(once.to_model())
    assert normalize(twice.body) == normalize(once.body)


def test_low_integrity_nondet_left_in_place():
    m = parse_model("""
    ProgramVariables. R x. R y. R t.
    Problem. [{x := *; {y := 1 ++ y := 2}; {t' = 1}}*]true
    End.
    """)
    canon = canonicalize(m, {"x"})
    assert canon.choice_vars == ("c",)
    assert AssignAny("x") in flatten_seq(canon.ctrl)


def test_high_integrity_assign_any_hoisted():
    m = parse_model("ProgramVariables. R x. R t. Problem. [{t := 0; x := *; {t' = 1}}*]true End.")
    canon = canonicalize(m)
    assert canon.assign_origin == {"c": "x"}
    assert Assign("x", Variable("c")) in flatten_seq(canon.ctrl)


def test_shape_errors():
    with pytest.raises(ShapeError):
        canonicalize(parse_model("ProgramVariables. R x. Problem. [x := 1]true End."))
    with pytest.raises(OdeInCtrl):
        canonicalize(parse_model("ProgramVariables. R x. Problem. [{{x' = 1}; {x' = 2}}*]true End."))


def test_renaming_touches_exactly_bound_variables(load):
    canon = canonicalize(load("vehicle_temp.hp"))
    xi = make_renaming(canon.program)
    bound = {x for x in bv(canon.program) if not x.endswith("'")}
    changed = {x for x, y in xi.map.items() if x != y and not x.endswith("'")}
    assert changed == bound
    assert len(set(xi.map.values())) == len(xi.map)
    assert not set(xi.map.values()) - set(xi.map) & set(xi.domain)


def test_eq_set_checks(load):
    canon = canonicalize(load("vehicle_temp.hp"))
    with pytest.raises(EqSetOverlapsSensors):
        compose(canon, {"temp_s"}, ["temp_s"])
    with pytest.raises(EqSetNotBound):
        compose(canon, {"temp_s"}, ["eps"])


def test_default_eq_set(load):
    canon = canonicalize(load("vehicle_temp.hp"))
    assert default_eq_set(canon, {"temp_s"}, ["v_p"]) == ["v_p", "d_p", "t"]


def test_totality_gate(load):
    canon = canonicalize(load("vehicle_temp.hp"))
    assert totality_gate(canon, {"temp_s"}, trusted=["v_p", "d_p"])[0]
    bad = canonicalize(load("partial_test.hp"))
    assert not totality_gate(bad, {"a"})[0]


@pytest.mark.parametrize("name", ["vehicle.hp", "vehicle_temp.hp"])
def test_canonicalization_preserves_runs(load, name):
    """Coupling draws by source site makes the original and canonical runs coincide."""
    m = load(name)
    canon = canonicalize(m)
    _, original, _ = split_problem(expand(m.problem, m))
    bounds = dict(VEHICLE_BOUNDS, v=(0.0, 10.0), d=(20.0, 200.0))
    for c in canon.choice_vars:
        bounds.pop(c, None)
    base = NondetPolicy(bounds=bounds, key_by_site=True, discrete={c: (1.0, 0.0) for c in canon.choice_vars})
    names = {x for x in bv(canon.program) | set(m.variable_names) if not x.endswith("'")}
    for r in range(30):
        pol = replace(base, seed=derive_seed(7, r))
        init = sample_state(names | {d.name for d in m.definitions if d.body is None}, pol)
        a = run(original, init, pol, 5)
        b = run(canon.program, init, pol, 5)
        assert a.failed == b.failed
        for x, y in zip(a.boundaries, b.boundaries):
            assert {k: x[k] for k in m.variable_names} == {k: y[k] for k in m.variable_names}


def test_deterministic_ctrl_has_no_choices():
    m = parse_model("ProgramVariables. R x. Problem. [{x := x + 1; {x' = 1}}*]true End.")
    canon = canonicalize(m)
    assert canon.choices is None and canon.ctrl == Assign("x", parse_formula("x + 1 > 0").left)


def test_renaming_examples(load):
    canon = canonicalize(load("vehicle_temp_canonical.hp"))
    xi = make_renaming(canon.program)
    for x in ["v_p", "d_p", "a", "t", "temp_p", "temp_s", "v_s", "d_s", "thermo", "c"]:
        assert xi.name(x) == x + "_1" and xi.name(x + "'") == x + "_1'"
    for k in ["A", "B", "eps", "T"]:
        assert xi.name(k) == k
    from hpsec.syntax import parse_program

    pure = make_renaming(parse_program("?x > y"))
    assert pure.to_json() == {}


def test_empty_eq_set(load):
    from hpsec.ast import TRUE

    comp = compose(canonicalize(load("vehicle_temp.hp")), {"temp_s"}, [])
    assert comp.eq_formula == TRUE
