"""Syntactic check that a program stays total when low-integrity inputs are arbitrary."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .ast import (
    And, Assign, AssignAny, Choice, Compare, Constant, FalseF, Implies, Loop, Neg, Not, ODE, Or, Seq,
    Test, TrueF, Variable, conj, flatten_choice, flatten_seq, term_vars, walk,
)
from .vars import fv, mbv


@dataclass(frozen=True)
class TaintResult:
    tainted: frozenset
    flow_edges: tuple  # (from, to, span)


@dataclass(frozen=True)
class Violation:
    kind: str  # TaintedOdeDomain | NonExhaustiveTest | UnknownExhaustiveness
    site: object
    detail: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "site": str(self.site) if self.site else None, "detail": self.detail}

    def render(self) -> str:
        sev = "warning" if self.kind == "UnknownExhaustiveness" else "error"
        where = str(self.site) if self.site else "<unknown>"
        return f"{where}: {sev}: {self.kind}: {self.detail}"


@dataclass(frozen=True)
class TotalityReport:
    status: str  # Total | Partial | Unknown
    violations: tuple = ()
    tainted: frozenset = field(default=frozenset())

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "tainted": sorted(self.tainted),
            "violations": [v.to_json() for v in self.violations],
        }


# ---------------------------------------------------------------- taint


def _edges(p) -> list[tuple[str, str, object]]:
    """Data and control dependency edges; control flows from a test to the rest of its branch."""
    out: list = []

    def visit(p, guards: frozenset, in_branch: bool) -> frozenset:
        if isinstance(p, Seq):
            return visit(p.b, visit(p.a, guards, in_branch), in_branch)
        if isinstance(p, Choice):
            visit(p.a, guards, True)
            visit(p.b, guards, True)
            return guards
        if isinstance(p, Loop):
            visit(p.a, guards, in_branch)
            return guards
        if isinstance(p, Test):
            return guards | frozenset(fv(p.f)) if in_branch else guards
        if isinstance(p, Assign):
            for v in sorted(term_vars(p.term) | guards):
                out.append((v, p.var, p.span))
            return guards
        if isinstance(p, AssignAny):
            for v in sorted(guards):
                out.append((v, p.var, p.span))
            return guards
        if isinstance(p, ODE):
            for x, t in p.equations:
                for v in sorted(term_vars(t) | guards):
                    out.append((v, x, p.span))
            return guards
        raise TypeError(p)

    visit(p, frozenset(), False)
    return out


def taint(p, sensors, trusted=()) -> TaintResult:
    """Variables that may depend on a compromised sensor (flow-insensitive fixpoint)."""
    trusted = frozenset(trusted)
    edges = _edges(p)
    tainted = set(sensors) - trusted
    changed = True
    while changed:
        changed = False
        for a, b, _ in edges:
            if a in tainted and b not in tainted and b not in trusted:
                tainted.add(b)
                changed = True
    used = tuple(e for e in edges if e[0] in tainted and e[1] in tainted)
    return TaintResult(frozenset(tainted), used)


# ---------------------------------------------------------------- guard exhaustiveness

_COVER = {"<": {"LT"}, "<=": {"LT", "EQ"}, "=": {"EQ"}, ">": {"GT"}, ">=": {"GT", "EQ"}, "!=": {"LT", "GT"}}
_FLIP = {"<": ">", "<=": ">=", "=": "=", ">": "<", ">=": "<=", "!=": "!="}
_NEG = {"<": ">=", "<=": ">", "=": "!=", ">": "<=", ">=": "<", "!=": "="}


def _const(t) -> Fraction | None:
    if isinstance(t, Constant):
        return t.value
    if isinstance(t, Neg) and isinstance(t.t, Constant):
        return -t.t.value
    return None


def _complementary(f, g) -> bool:
    if g == Not(f) or f == Not(g):
        return True
    if isinstance(f, Compare) and isinstance(g, Compare):
        if (g.left, g.right) == (f.left, f.right) and g.op == _NEG[f.op]:
            return True
        if (g.left, g.right) == (f.right, f.left) and g.op == _FLIP[_NEG[f.op]]:
            return True
    return False


def _trichotomy(guards) -> bool:
    cover: dict = {}
    for g in guards:
        if not isinstance(g, Compare):
            continue
        cover.setdefault((g.left, g.right), set()).update(_COVER[g.op])
        cover.setdefault((g.right, g.left), set()).update(_COVER[_FLIP[g.op]])
    return any(c >= {"LT", "EQ", "GT"} for c in cover.values())


def _single_var(f) -> tuple[str | None, list[Fraction]] | None:
    """(x, constants) if f is a boolean combination of `x op constant` atoms."""
    if isinstance(f, (TrueF, FalseF)):
        return None, []
    if isinstance(f, Not):
        return _single_var(f.f)
    if isinstance(f, (And, Or, Implies)):
        a, b = _single_var(f.left), _single_var(f.right)
        if a is None or b is None or (a[0] and b[0] and a[0] != b[0]):
            return None
        return a[0] or b[0], a[1] + b[1]
    if isinstance(f, Compare):
        for var, other in ((f.left, f.right), (f.right, f.left)):
            c = _const(other)
            if isinstance(var, Variable) and c is not None:
                return var.name, [c]
    return None


def _eval_single(f, x: str, value: Fraction) -> bool:
    if isinstance(f, TrueF):
        return True
    if isinstance(f, FalseF):
        return False
    if isinstance(f, Not):
        return not _eval_single(f.f, x, value)
    if isinstance(f, And):
        return _eval_single(f.left, x, value) and _eval_single(f.right, x, value)
    if isinstance(f, Or):
        return _eval_single(f.left, x, value) or _eval_single(f.right, x, value)
    if isinstance(f, Implies):
        return (not _eval_single(f.left, x, value)) or _eval_single(f.right, x, value)
    lhs = value if isinstance(f.left, Variable) else _const(f.left)
    rhs = value if isinstance(f.right, Variable) else _const(f.right)
    return {
        "<": lhs < rhs, "<=": lhs <= rhs, "=": lhs == rhs,
        ">": lhs > rhs, ">=": lhs >= rhs, "!=": lhs != rhs,
    }[f.op]


def _interval_points(consts: list[Fraction]) -> list[Fraction]:
    pts = sorted(set(consts))
    if not pts:
        return [Fraction(0)]
    out = [pts[0] - 1, pts[-1] + 1]
    for a, b in zip(pts, pts[1:]):
        out.append((a + b) / 2)
    return out + pts


def _interval_cover(guards) -> bool | None:
    """Exact decision for single-variable guards against constants; None if not applicable."""
    shapes = [_single_var(g) for g in guards]
    if any(s is None for s in shapes):
        return None
    names = {s[0] for s in shapes if s[0]}
    if len(names) > 1:
        return None
    x = names.pop() if names else "_"
    consts = [c for s in shapes for c in s[1]]
    return all(any(_eval_single(g, x, p) for g in guards) for p in _interval_points(consts))


def _value_set_cover(guards, program, bound_before: frozenset) -> bool:
    """Guards over x cover every constant x is ever assigned, when x is always assigned first."""
    shapes = [_single_var(g) for g in guards]
    if any(s is None for s in shapes):
        return False
    names = {s[0] for s in shapes if s[0]}
    if len(names) != 1:
        return False
    x = names.pop()
    if x not in bound_before:
        return False
    values = []
    for n in walk(program):
        if isinstance(n, AssignAny) and n.var == x:
            return False
        if isinstance(n, ODE) and x in n.variables:
            return False
        if isinstance(n, Assign) and n.var == x:
            c = _const(n.term)
            if c is None:
                return False
            values.append(c)
    return all(any(_eval_single(g, x, v) for g in guards) for v in values)


def _exhaustive(guards, program, bound_before) -> str:
    """'yes', 'gap' (provably not exhaustive) or 'unknown'."""
    if any(isinstance(g, TrueF) for g in guards):
        return "yes"
    if any(_complementary(f, g) for i, f in enumerate(guards) for g in guards[i + 1:]):
        return "yes"
    if _trichotomy(guards):
        return "yes"
    iv = _interval_cover(guards)
    if iv is True:
        return "yes"
    if _value_set_cover(guards, program, bound_before):
        return "yes"
    if iv is False:
        return "gap"
    return "unknown"


def _leading_tests(branch) -> list:
    out = []
    for p in flatten_seq(branch):
        if not isinstance(p, Test):
            break
        out.append(p)
    return out


def check_totality(p, sensors, trusted=()) -> TotalityReport:
    """Tainted ODE domains and tainted tests without exhaustive sibling guards."""
    tainted = taint(p, sensors, trusted).tainted
    violations: list[Violation] = []
    handled: set[int] = set()

    def is_tainted(f) -> bool:
        return bool(fv(f) & tainted)

    def group(c, before):
        branches = flatten_choice(c) if not c.low else [c.a, c.b]
        leads = [_leading_tests(b) for b in branches]
        guards = [conj(t.f for t in lead) if lead else TrueF() for lead in leads]
        tests = [t for lead in leads for t in lead]
        for t in tests:
            handled.add(id(t))
        dirty = [t for t in tests if is_tainted(t.f)]
        if dirty:
            verdict = _exhaustive(guards, p, before)
            if verdict == "gap":
                violations.append(Violation("NonExhaustiveTest", dirty[0].span, "guards on low-integrity variables leave a gap"))
            elif verdict == "unknown":
                violations.append(Violation("UnknownExhaustiveness", dirty[0].span, "cannot decide whether the guards are exhaustive"))
        for b in branches:
            visit(b, before)

    def visit(q, before: frozenset) -> frozenset:
        if isinstance(q, Seq):
            return visit(q.b, visit(q.a, before))
        if isinstance(q, Choice):
            group(q, before)
            return before | mbv(q)
        if isinstance(q, Loop):
            visit(q.a, before)
            return before
        if isinstance(q, ODE):
            if is_tainted(q.domain):
                site = q.domain.span or q.span
                violations.append(Violation("TaintedOdeDomain", site, "evolution domain reads " + ", ".join(sorted(fv(q.domain) & tainted))))
            return before | mbv(q)
        if isinstance(q, Test):
            if id(q) not in handled and is_tainted(q.f):
                verdict = _exhaustive([q.f], p, before)
                if verdict != "yes":
                    violations.append(Violation("NonExhaustiveTest", q.f.span or q.span, "test on low-integrity variables outside an exhaustive guarded choice"))
            return before
        return before | mbv(q)

    visit(p, frozenset())
    if not violations:
        status = "Total"
    elif any(v.kind != "UnknownExhaustiveness" for v in violations):
        status = "Partial"
    else:
        status = "Unknown"
    return TotalityReport(status, tuple(violations), tainted)
