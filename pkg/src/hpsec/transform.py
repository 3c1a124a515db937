"""Canonical form, renaming and interleaved self-composition of `(ctrl; plant)*` models."""

from __future__ import annotations

from dataclasses import dataclass, field

from .ast import (
    AssignAny, Assign, Box, Choice, Compare, Constant, Definition, FormulaRef, Implies, Loop,
    Model, ODE, ProgramRef, Seq, Test, TRUE, Variable, conj, conjuncts, expand, flatten_choice,
    flatten_seq, fresh_names, if_then_else, rename, seq, walk,
)
from .attack import _check as _check_attack, _replace
from .vars import all_vars, bv


class ShapeError(ValueError):
    pass


class OdeInCtrl(ShapeError):
    pass


class EqSetOverlapsSensors(ValueError):
    pass


class EqSetNotBound(ValueError):
    pass


def split_problem(problem):
    """(pre, loop, post) for `pre -> [loop]post` or `[loop]post`."""
    pre = TRUE
    f = problem
    if isinstance(f, Implies):
        pre, f = f.left, f.right
    if not isinstance(f, Box) or not isinstance(f.program, Loop):
        raise ShapeError("problem must have the shape pre -> [{ctrl; plant}*]post")
    return pre, f.program, f.f


def split_loop(loop: Loop) -> tuple[list, ODE]:
    items = flatten_seq(loop.a)
    if not isinstance(items[-1], ODE):
        raise ShapeError("loop body must end with a single differential equation")
    ctrl = items[:-1]
    for item in ctrl:
        for n in walk(item):
            if isinstance(n, ODE):
                raise OdeInCtrl(f"differential equation inside ctrl at {n.span}")
            if isinstance(n, Loop):
                raise ShapeError(f"loop inside ctrl at {n.span}")
    return ctrl, items[-1]


def guard_dispatched(p) -> bool:
    """Every branch of the choice group starts with a test."""
    return all(isinstance(flatten_seq(b)[0], Test) for b in flatten_choice(p))


@dataclass(frozen=True)
class CanonicalModel:
    choices: object  # Seq of AssignAny, or None
    ctrl: object
    plant: ODE
    choice_vars: tuple
    origin_map: dict = field(compare=False)
    pre: object = TRUE
    post: object = TRUE
    source: Model | None = field(default=None, compare=False)
    # choice variable -> original variable for `x := *` sites, absent for choices
    assign_origin: dict = field(default_factory=dict, compare=False)

    @property
    def body(self):
        return seq(self.choices, self.ctrl, self.plant)

    @property
    def program(self) -> Loop:
        return Loop(self.body)

    def to_model(self) -> Model:
        src = self.source or Model()
        defs = [d for d in src.definitions if d.body is None]
        refs = []
        if self.choices is not None:
            defs.append(Definition("choices", "HP", self.choices))
            refs.append(ProgramRef("choices"))
        defs += [Definition("ctrl", "HP", self.ctrl), Definition("plant", "HP", self.plant)]
        refs += [ProgramRef("ctrl"), ProgramRef("plant")]
        known = set(src.variable_names)
        variables = [(c, "R") for c in self.choice_vars if c not in known] + list(src.variables)
        box = Box(Loop(seq(*refs)), self.post)
        problem = box if self.pre == TRUE else Implies(self.pre, box)
        return Model(tuple(defs), tuple(variables), problem)


def _names_in(model: Model) -> set[str]:
    names = {d.name for d in model.definitions} | set(model.variable_names)
    for d in model.definitions:
        if d.body is not None:
            names |= {n.name for n in walk(d.body) if isinstance(n, Variable)}
    return names


def canonicalize(model: Model, low_integrity_nondet=frozenset()) -> CanonicalModel:
    """Hoist high-integrity nondeterminism of ctrl into fresh choice variables."""
    low = frozenset(low_integrity_nondet)
    pre, loop, post = split_problem(expand(model.problem, model))
    items, plant = split_loop(loop)

    taken = _names_in(model)
    choice_vars: list[str] = []
    origin: dict = {}
    assign_origin: dict = {}
    hoisted: list = []

    # a leading run of `c := *` is already a choices prefix
    k = 0
    while k < len(items) and isinstance(items[k], AssignAny) and not items[k].low and items[k].var not in low:
        v = items[k].var
        if any(isinstance(n, (Assign, AssignAny)) and n.var == v for it in items[k + 1:] for n in walk(it)):
            break
        hoisted.append(items[k])
        choice_vars.append(v)
        origin[v] = items[k].span
        k += 1

    def fresh(span):
        n = 1
        while True:
            name = "c" if n == 1 else f"c{n}"
            if name not in taken:
                taken.add(name)
                choice_vars.append(name)
                origin[name] = span
                hoisted.append(AssignAny(name, span=span))
                return name
            n += 1

    def go(p):
        if isinstance(p, Seq):
            return Seq(go(p.a), go(p.b), span=p.span)
        if isinstance(p, AssignAny):
            if p.low or p.var in low:
                return p
            c = fresh(p.span)
            assign_origin[c] = p.var
            return Assign(p.var, Variable(c), span=p.span)
        if isinstance(p, Choice):
            if p.low or guard_dispatched(p):
                return Choice(go(p.a), go(p.b), span=p.span, low=p.low)
            c = fresh(p.span)
            return if_then_else(Compare("!=", Variable(c), Constant(0)), go(p.a), go(p.b))
        return p

    ctrl = seq(*(go(p) for p in items[k:])) or Test(TRUE)
    return CanonicalModel(
        choices=seq(*hoisted),
        ctrl=ctrl,
        plant=plant,
        choice_vars=tuple(choice_vars),
        origin_map=origin,
        pre=pre,
        post=post,
        source=model,
        assign_origin=assign_origin,
    )


@dataclass(frozen=True)
class Renaming:
    map: dict
    domain: frozenset

    def __call__(self, node):
        return rename(node, self.map)

    def name(self, x: str) -> str:
        return self.map.get(x, x)

    def to_json(self) -> dict:
        return {k: v for k, v in sorted(self.map.items()) if k != v}


def make_renaming(program, suffix: str = "_1", taken=()) -> Renaming:
    """Fresh names for exactly the bound variables; everything else maps to itself."""
    v = all_vars(program)
    bound = {x for x in bv(program) if not x.endswith("'")}
    fresh = fresh_names(bound, v | set(taken), suffix)
    mapping = {x: x for x in v}
    for x, y in fresh.items():
        mapping[x] = y
        mapping[x + "'"] = y + "'"
    return Renaming(mapping, frozenset(v))


@dataclass(frozen=True)
class CompositionResult:
    composed: Model
    eq_set: tuple
    eq_formula: object
    renaming: Renaming
    obligation: object
    loop: Loop
    sensors: frozenset = frozenset()
    choice_vars: tuple = ()
    assign_origin: dict = field(default_factory=dict, compare=False)

    def manifest(self) -> dict:
        return {
            "eq_set": list(self.eq_set),
            "renaming": self.renaming.to_json(),
            "sensors": sorted(self.sensors),
            "choice_vars": list(self.choice_vars),
        }


def _zip_domains(q, r):
    a, b = conjuncts(q), conjuncts(r)
    out = []
    for i in range(max(len(a), len(b))):
        if i < len(a):
            out.append(a[i])
        if i < len(b):
            out.append(b[i])
    return conj(out)


def _def_name(base: str, taken: set) -> str:
    name = base
    k = 1
    while name in taken:
        name = f"{base}_{k}"
        k += 1
    taken.add(name)
    return name


def compose(canon: CanonicalModel, sensors, eq_set, renaming: Renaming | None = None, suffix: str = "_1") -> CompositionResult:
    """Interleaved composition of the canonical model with its renamed, attacked copy."""
    sensors = frozenset(sensors)
    order = list(dict.fromkeys(eq_set))
    program = canon.program
    bound = bv(program)
    overlap = sensors & set(order)
    if overlap:
        raise EqSetOverlapsSensors(f"coupling set shares {sorted(overlap)} with the attacked sensors")
    missing = [x for x in order if x not in bound]
    if missing:
        raise EqSetNotBound(f"{missing} are not bound by the program")
    _check_attack(program, sensors)
    xi = renaming or make_renaming(program, suffix)

    subst = seq(*(Assign(xi.name(a.var), Variable(a.var)) for a in flatten_seq(canon.choices))) if canon.choices else None
    ctrl_1 = xi(_replace(canon.ctrl, sensors))
    plant_1 = xi(canon.plant)
    merged = ODE(canon.plant.equations + plant_1.equations, _zip_domains(canon.plant.domain, plant_1.domain), span=canon.plant.span)
    eq = conj(Compare("=", Variable(x), Variable(xi.name(x))) for x in order)
    body = seq(canon.choices, canon.ctrl, subst, ctrl_1, merged)

    src = canon.source or Model()
    taken = set(src.variable_names) | set(xi.map.values()) | set(canon.choice_vars)
    defs = [d for d in src.definitions if d.body is None]
    taken |= {d.name for d in defs}
    eq_name = _def_name("eq_E", taken)
    defs.append(Definition(eq_name, "B", eq))
    refs = []
    for base, body_part in (("choices", canon.choices), ("ctrl", canon.ctrl), ("choices" + suffix, subst), ("ctrl" + suffix, ctrl_1)):
        if body_part is not None:
            n = _def_name(base, taken)
            defs.append(Definition(n, "HP", body_part))
            refs.append(ProgramRef(n))
    ctrl_c = _def_name("ctrlC", taken)
    plant_c = _def_name("plantC", taken)
    defs += [Definition(ctrl_c, "HP", seq(*refs)), Definition(plant_c, "HP", merged)]

    variables = []
    declared = [c for c in canon.choice_vars if c not in src.variable_names] + src.variable_names
    for x in declared:
        variables.append((x, "R"))
        if xi.name(x) != x:
            variables.append((xi.name(x), "R"))
    problem = Implies(FormulaRef(eq_name), Box(Loop(Seq(ProgramRef(ctrl_c), ProgramRef(plant_c))), FormulaRef(eq_name)))
    composed = Model(tuple(defs), tuple(variables), problem)
    loop = Loop(body)
    return CompositionResult(
        composed=composed,
        eq_set=tuple(order),
        eq_formula=eq,
        renaming=xi,
        obligation=Implies(eq, Box(loop, eq)),
        loop=loop,
        sensors=sensors,
        choice_vars=canon.choice_vars,
        assign_origin=dict(canon.assign_origin),
    )


def default_eq_set(canon: CanonicalModel, sensors, h) -> list[str]:
    """H plus every plant variable that the sensors cannot reach."""
    from .total import taint

    tainted = taint(canon.program, sensors).tainted
    out = list(dict.fromkeys(h))
    for x in canon.plant.variables:
        if x not in tainted and x not in out:
            out.append(x)
    return out


def totality_gate(canon: CanonicalModel, sensors, trusted=()):
    """Total-semantics precondition of the composition argument; returns (passed, report)."""
    from .total import check_totality

    report = check_totality(canon.program, sensors, trusted=trusted)
    return report.status == "Total", report

