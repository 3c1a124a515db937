"""Immutable syntax trees for terms, formulas and hybrid programs."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping, Union

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*'?\Z")
FUNCTIONS = {"exp": 1}


@dataclass(frozen=True)
class Span:
    file: str
    line: int
    column: int
    length: int = 0

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


def _span() -> Span | None:
    return field(default=None, compare=False, repr=False)


class CaptureError(Exception):
    pass


class CycleError(Exception):
    pass


# ---------------------------------------------------------------- terms


@dataclass(frozen=True)
class Variable:
    name: str
    span: Span | None = _span()

    def __post_init__(self) -> None:
        if not IDENT_RE.match(self.name):
            raise ValueError(f"bad identifier {self.name!r}")


@dataclass(frozen=True)
class Constant:
    value: Fraction
    span: Span | None = _span()

    def __post_init__(self) -> None:
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True)
class Plus:
    left: Term
    right: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class Minus:
    left: Term
    right: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class Times:
    left: Term
    right: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class Divide:
    left: Term
    right: Term
    span: Span | None = _span()

    def __post_init__(self) -> None:
        if isinstance(self.right, Constant) and self.right.value == 0:
            raise ValueError("division by the literal constant 0")


@dataclass(frozen=True)
class Neg:
    t: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class Power:
    base: Term
    exponent: int
    span: Span | None = _span()

    def __post_init__(self) -> None:
        if not isinstance(self.exponent, int) or self.exponent < 0:
            raise ValueError("exponent must be a nonnegative integer")


@dataclass(frozen=True)
class Apply:
    fn: str
    args: tuple
    span: Span | None = _span()

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", tuple(self.args))
        if FUNCTIONS.get(self.fn) != len(self.args):
            raise ValueError(f"unknown function {self.fn}/{len(self.args)}")


Term = Union[Variable, Constant, Plus, Minus, Times, Divide, Neg, Power, Apply]
TERM_TYPES = (Variable, Constant, Plus, Minus, Times, Divide, Neg, Power, Apply)

# ---------------------------------------------------------------- formulas

COMPARE_OPS = ("<", "<=", "=", ">", ">=", "!=")


@dataclass(frozen=True)
class Compare:
    op: str
    left: Term
    right: Term
    span: Span | None = _span()

    def __post_init__(self) -> None:
        if self.op not in COMPARE_OPS:
            raise ValueError(f"bad comparison {self.op!r}")


@dataclass(frozen=True)
class TrueF:
    span: Span | None = _span()


@dataclass(frozen=True)
class FalseF:
    span: Span | None = _span()


@dataclass(frozen=True)
class Not:
    f: Formula
    span: Span | None = _span()


@dataclass(frozen=True)
class And:
    left: Formula
    right: Formula
    span: Span | None = _span()


@dataclass(frozen=True)
class Or:
    left: Formula
    right: Formula
    span: Span | None = _span()


@dataclass(frozen=True)
class Implies:
    left: Formula
    right: Formula
    span: Span | None = _span()


@dataclass(frozen=True)
class Forall:
    var: str
    f: Formula
    span: Span | None = _span()


@dataclass(frozen=True)
class Exists:
    var: str
    f: Formula
    span: Span | None = _span()


@dataclass(frozen=True)
class Box:
    program: Program
    f: Formula
    span: Span | None = _span()


@dataclass(frozen=True)
class FormulaRef:
    """Reference to a `B name ::= ...` abbreviation."""

    name: str
    span: Span | None = _span()


Formula = Union[Compare, TrueF, FalseF, Not, And, Or, Implies, Forall, Exists, Box, FormulaRef]
FORMULA_TYPES = (Compare, TrueF, FalseF, Not, And, Or, Implies, Forall, Exists, Box, FormulaRef)
TRUE = TrueF()
FALSE = FalseF()

# ---------------------------------------------------------------- programs


@dataclass(frozen=True)
class Assign:
    var: str
    term: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class AssignAny:
    var: str
    span: Span | None = _span()
    # set by a /*@low*/ annotation: nondeterminism the attacker may control
    low: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class Test:
    __test__ = False  # not a pytest class
    f: Formula
    span: Span | None = _span()


@dataclass(frozen=True)
class ODE:
    equations: tuple
    domain: Formula = TRUE
    span: Span | None = _span()

    def __post_init__(self) -> None:
        eqs = tuple((x, t) for x, t in self.equations)
        object.__setattr__(self, "equations", eqs)
        if not eqs:
            raise ValueError("ODE needs at least one equation")
        names = [x for x, _ in eqs]
        if len(set(names)) != len(names):
            raise ValueError("ODE left-hand sides must be distinct")
        if any(x.endswith("'") for x in names):
            raise ValueError("ODE left-hand sides are unprimed names")

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(x for x, _ in self.equations)


@dataclass(frozen=True)
class Seq:
    a: Program
    b: Program
    span: Span | None = _span()


@dataclass(frozen=True)
class Choice:
    a: Program
    b: Program
    span: Span | None = _span()
    low: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class Loop:
    a: Program
    span: Span | None = _span()


@dataclass(frozen=True)
class ProgramRef:
    """Reference to an `HP name ::= ...` abbreviation."""

    name: str
    span: Span | None = _span()


Program = Union[Assign, AssignAny, Test, ODE, Seq, Choice, Loop, ProgramRef]
PROGRAM_TYPES = (Assign, AssignAny, Test, ODE, Seq, Choice, Loop, ProgramRef)
Node = Union[Term, Formula, Program]

# ---------------------------------------------------------------- models

SORTS = ("R", "B", "HP")


@dataclass(frozen=True)
class Definition:
    name: str
    sort: str
    body: Node | None = None
    span: Span | None = _span()


@dataclass(frozen=True)
class Model:
    definitions: tuple = ()
    variables: tuple = ()  # (name, sort) pairs
    problem: Formula = TRUE

    def __post_init__(self) -> None:
        object.__setattr__(self, "definitions", tuple(self.definitions))
        object.__setattr__(self, "variables", tuple((n, s) for n, s in self.variables))

    def definition(self, name: str) -> Definition | None:
        for d in self.definitions:
            if d.name == name:
                return d
        return None

    @property
    def constants(self) -> list[str]:
        return [d.name for d in self.definitions if d.sort == "R" and d.body is None]

    @property
    def variable_names(self) -> list[str]:
        return [n for n, _ in self.variables]


# ---------------------------------------------------------------- helpers


def children(node: Node) -> tuple:
    """Direct sub-nodes in field order (terms, formulas, programs)."""
    if isinstance(node, ODE):
        return tuple(t for _, t in node.equations) + (node.domain,)
    if isinstance(node, Apply):
        return node.args
    out = []
    for f in fields(node):
        if f.name in ("span", "low"):
            continue
        v = getattr(node, f.name)
        if isinstance(v, TERM_TYPES + FORMULA_TYPES + PROGRAM_TYPES):
            out.append(v)
    return tuple(out)


def walk(node: Node) -> Iterator[Node]:
    """Pre-order traversal."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(children(n)))


def map_children(node: Node, fn: Callable[[Node], Node]) -> Node:
    """Rebuild `node` with `fn` applied to each direct sub-node."""
    if isinstance(node, ODE):
        return replace(node, equations=tuple((x, fn(t)) for x, t in node.equations), domain=fn(node.domain))
    if isinstance(node, Apply):
        return replace(node, args=tuple(fn(a) for a in node.args))
    changes = {}
    for f in fields(node):
        if f.name in ("span", "low"):
            continue
        v = getattr(node, f.name)
        if isinstance(v, TERM_TYPES + FORMULA_TYPES + PROGRAM_TYPES):
            changes[f.name] = fn(v)
    return replace(node, **changes) if changes else node


def term_vars(t: Term) -> set[str]:
    return {n.name for n in walk(t) if isinstance(n, Variable)}


def seq(*parts: Program | None) -> Program | None:
    """Right-nested sequence of the non-empty parts."""
    items = [p for p in parts if p is not None]
    if not items:
        return None
    out = items[-1]
    for p in reversed(items[:-1]):
        out = Seq(p, out)
    return out


def choice(*parts: Program) -> Program:
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = Choice(p, out)
    return out


def conj(parts: Iterable[Formula]) -> Formula:
    items = list(parts)
    if not items:
        return TRUE
    out = items[-1]
    for f in reversed(items[:-1]):
        out = And(f, out)
    return out


def conjuncts(f: Formula) -> list[Formula]:
    if isinstance(f, And):
        return conjuncts(f.left) + conjuncts(f.right)
    return [f]


def flatten_seq(p: Program) -> list[Program]:
    if isinstance(p, Seq):
        return flatten_seq(p.a) + flatten_seq(p.b)
    return [p]


def flatten_choice(p: Program) -> list[Program]:
    if isinstance(p, Choice) and not p.low:
        return flatten_choice(p.a) + flatten_choice(p.b)
    return [p]


def normalize(node: Node) -> Node:
    """Re-associate every sequence to the right, so that equality is modulo `;` grouping."""
    if isinstance(node, Seq):
        return seq(*(normalize(p) for p in flatten_seq(node)))
    return map_children(node, normalize)


def same_program(a: Program, b: Program) -> bool:
    return normalize(a) == normalize(b)


def if_then_else(cond: Formula, then: Program, other: Program) -> Program:
    return Choice(Seq(Test(cond), then), Seq(Test(Not(cond)), other))


def match_if(p: Program) -> tuple[Formula, Program, Program] | None:
    """Recognize the desugared form of `if (f) then a else b`."""
    if not isinstance(p, Choice) or p.low:
        return None
    a, b = p.a, p.b
    if not (isinstance(a, Seq) and isinstance(b, Seq)):
        return None
    if not (isinstance(a.a, Test) and isinstance(b.a, Test)):
        return None
    if b.a.f != Not(a.a.f):
        return None
    return a.a.f, a.b, b.b


# ---------------------------------------------------------------- substitution


def _formula_free(f: Node) -> set[str]:
    from .vars import fv

    return fv(f)


def substitute(entity: Node, bindings: Mapping[str, Term]) -> Node:
    """Capture-avoiding replacement of free variables by terms."""
    if not bindings:
        return entity
    if isinstance(entity, Variable):
        return bindings.get(entity.name, entity)
    if isinstance(entity, (Forall, Exists)):
        inner = {k: v for k, v in bindings.items() if k != entity.var}
        if not inner:
            return entity
        body_free = _formula_free(entity.f)
        for k, v in inner.items():
            if k in body_free and entity.var in term_vars(v):
                raise CaptureError(f"substituting {k} would capture {entity.var}")
        return replace(entity, f=substitute(entity.f, inner))
    if isinstance(entity, PROGRAM_TYPES) or isinstance(entity, Box):
        from .vars import bv

        prog = entity.program if isinstance(entity, Box) else entity
        bound = bv(prog)
        for k, v in bindings.items():
            if k in bound or term_vars(v) & bound:
                raise CaptureError(f"substituting {k} crosses a binding of {sorted(bound)}")
    return map_children(entity, lambda c: substitute(c, bindings))


def rename(entity: Node, mapping: Mapping[str, str]) -> Node:
    """Rename variables everywhere, including assignment and ODE targets."""
    if not mapping:
        return entity
    get = lambda n: mapping.get(n, n)  # noqa: E731
    if isinstance(entity, Variable):
        return replace(entity, name=get(entity.name))
    if isinstance(entity, (Assign,)):
        return replace(entity, var=get(entity.var), term=rename(entity.term, mapping))
    if isinstance(entity, AssignAny):
        return replace(entity, var=get(entity.var))
    if isinstance(entity, ODE):
        return replace(
            entity,
            equations=tuple((get(x), rename(t, mapping)) for x, t in entity.equations),
            domain=rename(entity.domain, mapping),
        )
    if isinstance(entity, (Forall, Exists)):
        return replace(entity, var=get(entity.var), f=rename(entity.f, mapping))
    return map_children(entity, lambda c: rename(c, mapping))


# ---------------------------------------------------------------- abbreviations


def expand(node: Node, model: Model) -> Node:
    """Inline every abbreviation reachable from `node`."""
    defs = {d.name: d for d in model.definitions}
    term_defs = {n: d.body for n, d in defs.items() if d.sort == "R" and d.body is not None}

    def go(n: Node, active: tuple[str, ...]) -> Node:
        if isinstance(n, (ProgramRef, FormulaRef)) or (isinstance(n, Variable) and n.name in term_defs):
            d = defs.get(n.name)
            if d is None or d.body is None:
                raise KeyError(f"undefined abbreviation {n.name}")
            if n.name in active:
                raise CycleError(" -> ".join(active + (n.name,)))
            return go(d.body, active + (n.name,))
        return map_children(n, lambda c: go(c, active))

    return go(node, ())


def expand_abbreviations(model: Model) -> Model:
    """Model whose problem refers only to primitive constructs, constants and variables."""
    for d in model.definitions:
        if d.body is not None:
            expand(d.body, model)
    problem = expand(model.problem, model)
    keep = tuple(d for d in model.definitions if d.body is None)
    return Model(keep, model.variables, problem)


def fresh_names(base_names: Iterable[str], taken: Iterable[str], suffix_policy: str = "_1") -> dict[str, str]:
    """Injective map to names outside `taken`: append the suffix, then bump `_k` on collision."""
    used = set(taken)
    out: dict[str, str] = {}
    for name in sorted(set(base_names)):
        cand = name + suffix_policy
        k = 1
        while cand in used:
            cand = f"{name}{suffix_policy}_{k}"
            k += 1
        used.add(cand)
        out[name] = cand
    return out


STRICT_CORE_EXTENSIONS = (Minus, Neg, Divide, Power, Apply)


def strict_core_violations(node: Node) -> list[Node]:
    """Nodes outside the {+, x} term core (minus, negation, division, powers, functions)."""
    return [n for n in walk(node) if isinstance(n, STRICT_CORE_EXTENSIONS)]
