"""Free, bound and must-bound variables of formulas and hybrid programs."""

from __future__ import annotations

from dataclasses import dataclass

from .ast import (
    Assign, AssignAny, Box, Choice, Compare, Exists, FalseF, Forall, FormulaRef, Implies, Loop,
    Model, Node, Not, ODE, And, Or, ProgramRef, Seq, Test, TrueF, TERM_TYPES, term_vars,
)


class UnexpandedReference(ValueError):
    pass


@dataclass(frozen=True)
class VarSets:
    fv: frozenset
    bv: frozenset
    mbv: frozenset
    all: frozenset

    def to_json(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("fv", "bv", "mbv", "all")}


def _ref(node: Node):
    raise UnexpandedReference(f"abbreviation {node.name} must be expanded first")


def bv_program(p) -> set[str]:
    if isinstance(p, (Assign, AssignAny)):
        return {p.var}
    if isinstance(p, Test):
        return set()
    if isinstance(p, ODE):
        return {x for x in p.variables} | {x + "'" for x in p.variables}
    if isinstance(p, (Seq, Choice)):
        return bv_program(p.a) | bv_program(p.b)
    if isinstance(p, Loop):
        return bv_program(p.a)
    if isinstance(p, ProgramRef):
        _ref(p)
    raise TypeError(p)


def mbv_program(p) -> set[str]:
    if isinstance(p, (Assign, AssignAny)):
        return {p.var}
    if isinstance(p, Test):
        return set()
    if isinstance(p, ODE):
        return bv_program(p)
    if isinstance(p, Choice):
        return mbv_program(p.a) & mbv_program(p.b)
    if isinstance(p, Seq):
        return mbv_program(p.a) | mbv_program(p.b)
    if isinstance(p, Loop):
        return set()
    if isinstance(p, ProgramRef):
        _ref(p)
    raise TypeError(p)


def fv_program(p) -> set[str]:
    if isinstance(p, Assign):
        return term_vars(p.term)
    if isinstance(p, AssignAny):
        return set()
    if isinstance(p, Test):
        return fv_formula(p.f)
    if isinstance(p, ODE):
        out = set(p.variables) | fv_formula(p.domain)
        for _, t in p.equations:
            out |= term_vars(t)
        return out
    if isinstance(p, Choice):
        return fv_program(p.a) | fv_program(p.b)
    if isinstance(p, Seq):
        return fv_program(p.a) | (fv_program(p.b) - mbv_program(p.a))
    if isinstance(p, Loop):
        return fv_program(p.a)
    if isinstance(p, ProgramRef):
        _ref(p)
    raise TypeError(p)


def fv_formula(f) -> set[str]:
    if isinstance(f, Compare):
        return term_vars(f.left) | term_vars(f.right)
    if isinstance(f, (TrueF, FalseF)):
        return set()
    if isinstance(f, Not):
        return fv_formula(f.f)
    if isinstance(f, (And, Or, Implies)):
        return fv_formula(f.left) | fv_formula(f.right)
    if isinstance(f, (Forall, Exists)):
        return fv_formula(f.f) - {f.var}
    if isinstance(f, Box):
        return fv_program(f.program) | (fv_formula(f.f) - mbv_program(f.program))
    if isinstance(f, FormulaRef):
        _ref(f)
    raise TypeError(f)


def bv_formula(f) -> set[str]:
    if isinstance(f, (Compare, TrueF, FalseF)):
        return set()
    if isinstance(f, Not):
        return bv_formula(f.f)
    if isinstance(f, (And, Or, Implies)):
        return bv_formula(f.left) | bv_formula(f.right)
    if isinstance(f, (Forall, Exists)):
        return {f.var} | bv_formula(f.f)
    if isinstance(f, Box):
        return bv_program(f.program) | bv_formula(f.f)
    if isinstance(f, FormulaRef):
        _ref(f)
    raise TypeError(f)


def _is_program(node) -> bool:
    return isinstance(node, (Assign, AssignAny, Test, ODE, Seq, Choice, Loop, ProgramRef))


def fv(node: Node) -> set[str]:
    if isinstance(node, TERM_TYPES):
        return term_vars(node)
    return fv_program(node) if _is_program(node) else fv_formula(node)


def bv(node: Node) -> set[str]:
    if isinstance(node, TERM_TYPES):
        return set()
    return bv_program(node) if _is_program(node) else bv_formula(node)


def mbv(node: Node) -> set[str]:
    return mbv_program(node) if _is_program(node) else set()


def all_vars(node: Node) -> set[str]:
    return fv(node) | bv(node)


def analyze(node: Node) -> VarSets:
    f, b, m = fv(node), bv(node), mbv(node)
    return VarSets(frozenset(f), frozenset(b), frozenset(m), frozenset(f | b))


def partition_constants(names, model: Model) -> tuple[set[str], set[str]]:
    """Split names into (declared constants, everything else)."""
    consts = set(model.constants)
    names = set(names)
    return names & consts, names - consts
