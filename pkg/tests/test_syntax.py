from __future__ import annotations

import glob
import random

import pytest
from hypothesis import HealthCheck, given, settings

from hpsec.ast import Assign, AssignAny, Choice, Loop, Seq, Test, Variable
from hpsec.syntax import (
    ParseError, parse_formula, parse_model, parse_program, parse_term, print_formula, print_model,
    print_program, print_term,
)

from conftest import CORPUS
from strategies import formulas_with_programs, programs, terms

CORPUS_FILES = sorted(glob.glob(str(CORPUS / "*.hp")))


@settings(max_examples=1000, deadline=None, suppress_health_check=list(HealthCheck))
@given(programs)
def test_program_roundtrip(p):
    assert parse_program(print_program(p)) == p


@settings(max_examples=1000, deadline=None, suppress_health_check=list(HealthCheck))
@given(formulas_with_programs)
def test_formula_roundtrip(f):
    assert parse_formula(print_formula(f)) == f


@settings(max_examples=500, deadline=None)
@given(terms)
def test_term_roundtrip(t):
    assert parse_term(print_term(t)) == t


@pytest.mark.parametrize("path", CORPUS_FILES, ids=lambda p: p.rsplit("/", 1)[-1])
def test_corpus_roundtrip(path):
    text = open(path).read()
    m = parse_model(text, path)
    printed = print_model(m)
    assert parse_model(printed) == m
    assert print_model(parse_model(printed)) == printed


def test_precedence():
    p = parse_program("x := 1; y := 2 ++ ?x > 0")
    assert isinstance(p, Choice) and isinstance(p.a, Seq)
    assert parse_term("-x^2") == parse_term("-(x^2)")
    assert isinstance(parse_program("{x := 1}*"), Loop)


def test_nondeterministic_assignment_and_test():
    p = parse_program("v_s := *; ?v_s >= 0")
    assert p == Seq(AssignAny("v_s"), Test(parse_formula("v_s >= 0")))


def test_if_then_else_sugar():
    p = parse_program("if (x > 0) then y := 1 else y := 2")
    assert p == parse_program("{?x > 0; y := 1 ++ ?!(x > 0); y := 2}")


def test_low_annotation_survives():
    p = parse_program("/*@low*/ {x := 1 ++ x := 2}")
    assert isinstance(p, Choice) and p.low
    assert "/*@low*/" in print_program(p)


def test_diagnostic_span():
    with pytest.raises(ParseError) as e:
        parse_program("x := ;", "f.hp")
    assert "f.hp:1:" in str(e.value)


def test_assign_to_rhs_span():
    p = parse_program("x := y", "f.hp")
    assert p == Assign("x", Variable("y"))
    assert p.span.line == 1 and p.span.column == 1


_ALPHABET = list("{}()[];:=*+-/^<>!&|?'.,_ \n") + [
    "++", ":=", "->", "<->", "HP", "R", "Definitions.", "ProgramVariables.", "Problem.", "End.",
    "if", "then", "else", "/*@low*/", "/*", "*/", "0", "1e9", "x", "exp", "\\forall",
]


def _mutants(n: int, seed: int = 0):
    """Random token soup and mutated windows of corpus text."""
    rng = random.Random(seed)
    sources = [open(p).read() for p in CORPUS_FILES]
    for i in range(n):
        if i % 4 == 0:
            yield "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(0, 40)))
            continue
        src = rng.choice(sources)
        if i % 4 == 1:
            chars = list(src)
        else:
            lo = rng.randrange(len(src))
            chars = list(src[lo:lo + rng.randint(1, 200)])
        for _ in range(rng.randint(1, 4)):
            k = rng.randrange(len(chars) + 1)
            r = rng.random()
            if r < 0.4 and chars:
                del chars[min(k, len(chars) - 1)]
            elif r < 0.8:
                chars.insert(k, rng.choice(_ALPHABET))
            else:
                del chars[k:rng.randrange(len(chars) + 1)]
        yield "".join(chars)


PARSERS = [parse_model, parse_program, parse_formula, parse_term]


def test_parser_never_panics_on_fuzzed_input():
    crashes = []
    for i, text in enumerate(_mutants(100_000)):
        parser = PARSERS[0] if i % 4 == 1 else PARSERS[i % len(PARSERS)]
        try:
            parser(text)
        except ParseError:
            pass
        except Exception as e:  # anything else is a parser bug
            crashes.append((parser.__name__, type(e).__name__, text[:80]))
    assert not crashes, crashes[:5]


def test_empty_blocks():
    from hpsec.ast import TRUE

    assert parse_model("Problem. true End.").problem == TRUE


def test_not_equal_printed_ascii():
    assert print_formula(parse_formula("x ≠ y")) == "x != y"


def test_vehicle_definition_shapes():
    from hpsec.ast import ODE

    m = parse_model(open(CORPUS / "vehicle.hp").read())
    bodies = {d.name: d.body for d in m.definitions}
    assert isinstance(bodies["plant"], ODE) and bodies["plant"].variables == ("d", "v", "t")
