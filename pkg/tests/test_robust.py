from __future__ import annotations

import json
import random
from dataclasses import replace

import pytest

from hpsec.ast import Seq, Test, TRUE, flatten_seq, seq
from hpsec.attack import attack
from hpsec.robust import (
    Certificate, EquivGoal, OracleConfig, Unproven, Unsupported, base_oracle, certificate_errors,
    check_certificate, check_robust_safety, goal_digest, prove_equiv, safety_goal,
)
from hpsec.syntax import parse_program
from hpsec.vars import bv, fv

ROBUST = [
    ("abs_voting.hp", "w_s1"),
    ("abs_voting.hp", "w_s2"),
    ("abs_voting.hp", "w_s3"),
    ("mcas_fixed.hp", "s_L"),
    ("mcas_fixed.hp", "s_R"),
]
NOT_PROVEN = [("mcas.hp", "s_L"), ("mcas.hp", "s_R"), ("vehicle_sensing.hp", "v_s")]


@pytest.mark.parametrize("name,sensor", ROBUST)
def test_robust_cases(load, name, sensor):
    v = check_robust_safety(load(name), {sensor})
    assert v.status == "RobustlySafe_Empirical"
    assert v.certificate.rules()[:4] == ["Subset", "LoopLift", "SeqCompose", "Unmodified"]
    assert check_certificate(v.certificate)
    assert not v.certificate.deductive


@pytest.mark.parametrize("name,sensor", NOT_PROVEN)
def test_unproven_cases(load, name, sensor):
    v = check_robust_safety(load(name), {sensor})
    assert v.status == "Unproven" and v.certificate is None
    assert "not a proof of unsafety" in v.to_json()["note"]


def test_safety_goal_uses_pre_and_post(load):
    assert safety_goal(load("abs_voting.hp"), {"w_s1"}).h == {"v_p", "w_p"}


def test_no_sensors_gives_self(load):
    m = load("vehicle.hp")
    goal = safety_goal(m, set())
    c = prove_equiv(goal)
    assert c.rule == "Self" and not c.children and c.deductive and check_certificate(c)


def test_attack_invariant_gives_self():
    p = parse_program("{x := *; {y' = x}}*")
    right, _ = attack(p, {"x"})
    c = prove_equiv(EquivGoal(p, right, {"y"}))
    assert c.rule == "Self" and c.deductive


def test_oracle_voting_masks_attack():
    left = parse_program(
        "w_s1 := w_p; w_s2 := w_p; w_s3 := w_p; if (w_s1 = w_s2 | w_s1 = w_s3) then w_s := w_s1 else w_s := w_s2"
    )
    right, _ = attack(left, {"w_s1"})
    assert base_oracle(EquivGoal(left, right, {"w_s", "w_p"})).passed


def test_oracle_finds_witness():
    r = base_oracle(EquivGoal(parse_program("v_s := v_p"), parse_program("v_s := *"), {"v_s"}))
    assert not r.passed
    assert r.counterexample["direction"] == "right->left"


def test_oracle_identical_programs():
    p = parse_program("x := y + 1 ++ x := y")
    assert base_oracle(EquivGoal(p, p, {"x", "y"})).passed


def test_oracle_rejects_loops():
    with pytest.raises(Unsupported):
        base_oracle(EquivGoal(parse_program("{x := 1}*"), parse_program("{x := 1}*"), {"x"}))


def _voting_derivation(model):
    """The voting derivation built by hand: base case, widen, compose, lift, shrink."""
    goal = safety_goal(model, {"w_s1"})
    left, right = flatten_seq(goal.left.a), flatten_seq(goal.right.a)
    k = next(i for i, p in enumerate(left) if "w_s" in bv(p)) + 1
    a, b, c = seq(*left[:k]), seq(*right[:k]), seq(*left[k:])
    h = frozenset(fv(c) | fv(Seq(a, c)) | fv(Seq(b, c)))
    base = EquivGoal(a, b, {"w_s", "w_p"})
    leaf = Certificate(base, "BaseOracle", oracle_report=base_oracle(base))
    widened = Certificate(EquivGoal(a, b, h), "Unmodified", (("disjoint", h - base.h),), (leaf,))
    same = Certificate(EquivGoal(c, c, h), "Self")
    body = Certificate(EquivGoal(Seq(a, c), Seq(b, c), h), "SeqCompose", (("FV", frozenset(fv(c))),), (widened, same))
    lifted = Certificate(replace(goal, h=h), "LoopLift", children=(body,))
    return Certificate(goal, "Subset", children=(lifted,))


def test_hand_built_voting_derivation(load):
    cert = _voting_derivation(load("abs_voting.hp"))
    assert certificate_errors(cert) == []


def test_seqcompose_side_condition_checked(load):
    cert = _voting_derivation(load("abs_voting.hp"))
    body = cert.children[0].children[0]
    small = frozenset({"w_s", "w_p"})
    a, c = body.children
    bad = Certificate(
        replace(body.goal, h=small),
        "SeqCompose",
        body.side_conditions,
        (Certificate(replace(a.goal, h=small), "BaseOracle", oracle_report=base_oracle(replace(a.goal, h=small))),
         Certificate(replace(c.goal, h=small), "Self")),
    )
    errs = certificate_errors(bad)
    assert any("SeqCompose needs" in e for e in errs)


def test_self_on_different_programs_rejected():
    c = Certificate(EquivGoal(parse_program("x := 1"), parse_program("x := 2"), {"x"}), "Self")
    assert not check_certificate(c)


def test_json_roundtrip(load):
    cert = check_robust_safety(load("abs_voting.hp"), {"w_s2"}).certificate
    back = Certificate.from_json(json.loads(json.dumps(cert.to_json())))
    assert check_certificate(back)
    assert back.to_json() == cert.to_json()


def _nodes(c, path=()):
    yield path, c
    for i, k in enumerate(c.children):
        yield from _nodes(k, path + (i,))


def _put(c, path, new):
    if not path:
        return new
    kids = list(c.children)
    kids[path[0]] = _put(kids[path[0]], path[1:], new)
    return replace(c, children=tuple(kids))


def _mutate(cert, rng):
    path, node = rng.choice(list(_nodes(cert)))
    kind = rng.choice(["rule", "h", "program", "arity", "report"])
    if kind == "report" and node.oracle_report is None:
        kind = "rule"
    if kind == "rule":
        rules = ["Self", "Subset", "Unmodified", "SeqCompose", "LoopLift", "BaseOracle"]
        new = replace(node, rule=rng.choice([r for r in rules if r != node.rule]))
    elif kind == "h":
        h = set(node.goal.h)
        if not path or not h:
            h.add("zz_unrelated")
        else:
            h.discard(rng.choice(sorted(h)))
        new = replace(node, goal=replace(node.goal, h=frozenset(h)))
    elif kind == "program":
        side = rng.choice(["left", "right"])
        p = getattr(node.goal, side)
        new = replace(node, goal=replace(node.goal, **{side: Seq(p, Test(TRUE)) if rng.random() < 0.5 else parse_program("x := 0")}))
    elif kind == "arity":
        new = replace(node, children=node.children[1:] if node.children else (node,))
    else:
        r = node.oracle_report
        new = replace(node, oracle_report=replace(r, passed=False) if rng.random() < 0.5 else replace(r, goal_digest="0" * 64))
    return _put(cert, path, new)


def test_mutated_certificates_rejected(load):
    certs = [check_robust_safety(load(n), {s}).certificate for n, s in ROBUST]
    rng = random.Random(0)
    accepted = []
    for i in range(100):
        mutant = _mutate(certs[i % len(certs)], rng)
        if check_certificate(mutant):
            accepted.append(json.dumps(mutant.to_json())[:200])
    assert not accepted, accepted[:3]


def test_goal_digest_ignores_sequence_grouping():
    a = parse_program("x := 1; y := 2; z := 3")
    b = Seq(Seq(*flatten_seq(a)[:2]), flatten_seq(a)[2])
    assert goal_digest(EquivGoal(a, a, {"x"})) == goal_digest(EquivGoal(b, b, {"x"}))


def test_oracle_config_seed_changes_samples():
    goal = EquivGoal(parse_program("v_s := v_p"), parse_program("v_s := *"), {"v_s"})
    a = base_oracle(goal, OracleConfig(seed=1))
    b = base_oracle(goal, OracleConfig(seed=2))
    assert a.counterexample != b.counterexample


def test_unproven_is_a_value():
    m = parse_program("{v_s := v_p; a := v_s; {v_p' = a}}*")
    right, _ = attack(m, {"v_s"})
    assert isinstance(prove_equiv(EquivGoal(m, right, {"v_p"})), Unproven)
