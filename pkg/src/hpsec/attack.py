"""Sensor attacks: every assignment to a compromised sensor becomes `x := *`."""

from __future__ import annotations

from dataclasses import dataclass, field

from .ast import Assign, AssignAny, Model, ODE, ProgramRef, TERM_TYPES, expand, map_children, walk
from .vars import bv


class NotASensor(ValueError):
    pass


class SensorInPlant(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    sensors: frozenset
    provenance: dict = field(default_factory=dict, compare=False)  # name -> [Span]

    def to_json(self) -> dict:
        return {
            "sensors": sorted(self.sensors),
            "provenance": {k: [str(s) for s in v] for k, v in sorted(self.provenance.items())},
        }


def _replace(node, sensors: frozenset, provenance: dict | None = None):
    """Raw rewrite without any well-formedness checks."""
    if isinstance(node, Assign) and node.var in sensors:
        if provenance is not None:
            provenance.setdefault(node.var, []).append(node.span)
        return AssignAny(node.var, span=node.span)
    if isinstance(node, TERM_TYPES + (AssignAny, ProgramRef)):
        return node
    return map_children(node, lambda c: _replace(c, sensors, provenance))


def _check(program, sensors: frozenset) -> None:
    for n in walk(program):
        if isinstance(n, ODE):
            hit = sensors & set(n.variables)
            if hit:
                raise SensorInPlant(f"sensor {sorted(hit)[0]} is evolved by a differential equation")
    bound = bv(program)
    for s in sorted(sensors):
        if s not in bound:
            raise NotASensor(f"{s} is never assigned by the program")


def attack(p, sensors) -> tuple:
    """attacked(p, sensors) together with the sites that were replaced."""
    sensors = frozenset(sensors)
    _check(p, sensors)
    prov: dict = {}
    out = _replace(p, sensors, prov)
    return out, AttackSpec(sensors, prov)


def is_attack_invariant(p, sensors) -> bool:
    return _replace(p, frozenset(sensors)) == p


def attack_model(model: Model, sensors) -> tuple[Model, AttackSpec]:
    """Attack a whole model, rewriting abbreviation bodies in place so the layout survives."""
    sensors = frozenset(sensors)
    _check(expand(model.problem, model), sensors)
    prov: dict = {}
    defs = tuple(
        d if d.body is None or d.sort != "HP" else type(d)(d.name, d.sort, _replace(d.body, sensors, prov), d.span)
        for d in model.definitions
    )
    problem = _replace(model.problem, sensors, prov)
    return Model(defs, model.variables, problem), AttackSpec(sensors, prov)
