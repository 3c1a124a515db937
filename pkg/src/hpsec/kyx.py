"""Emission of KeYmaera X archive files (`.kyx`)."""

from __future__ import annotations

from .ast import (
    Apply, Assign, AssignAny, Choice, Loop, Model, ODE, ProgramRef, Seq, Test, TrueF, flatten_seq,
    walk,
)
from .syntax import print_formula, print_term


class UnsupportedConstruct(ValueError):
    pass


def _terminated(p) -> tuple[str, bool]:
    if isinstance(p, Assign):
        return f"{p.var}:={_term(p.term)};", True
    if isinstance(p, AssignAny):
        return f"{p.var}:=*;", True
    if isinstance(p, Test):
        return f"?{_formula(p.f)};", True
    if isinstance(p, ODE):
        eqs = ", ".join(f"{x}'={_term(t)}" for x, t in p.equations)
        dom = "" if isinstance(p.domain, TrueF) else f" & {_formula(p.domain)}"
        return "{" + eqs + dom + "}", False
    if isinstance(p, Loop):
        return "{" + kyx_program(p.a) + "}*", False
    if isinstance(p, Choice):
        return "{" + kyx_program(p.a) + " ++ " + kyx_program(p.b) + "}", False
    if isinstance(p, ProgramRef):
        return p.name, False
    if isinstance(p, Seq):
        return "{" + kyx_program(p) + "}", False
    raise UnsupportedConstruct(type(p).__name__)


def kyx_program(p) -> str:
    """Program text in prover syntax; choices stay desugared and atoms carry their `;`."""
    out = ""
    items = flatten_seq(p)
    for k, item in enumerate(items):
        text, done = _terminated(item)
        out += text
        if not done and k + 1 < len(items):
            out += ";"
    return out


def _term(t) -> str:
    return print_term(t).replace(" ", "")


def _formula(f) -> str:
    return print_formula(f, prog=kyx_program)


def _check(node, allow_exp: bool) -> None:
    for n in walk(node):
        if isinstance(n, Apply) and not (allow_exp and n.fn == "exp"):
            raise UnsupportedConstruct(f"function {n.fn} has no prover image")


def emit_kyx(model: Model, name: str = "model", allow_exp: bool = True) -> str:
    """Archive text; `allow_exp=False` rejects exp() instead of using the prover's interpreted exp."""
    lines = [f'ArchiveEntry "{name}"', "", "Definitions"]
    for d in model.definitions:
        if d.body is not None:
            _check(d.body, allow_exp)
        if d.body is None:
            lines.append(f"  Real {d.name};")
        elif d.sort == "R":
            lines.append(f"  Real {d.name} = ({_term(d.body)});")
        elif d.sort == "B":
            lines.append(f"  Bool {d.name} <-> ({_formula(d.body)});")
        else:
            lines.append(f"  HP {d.name} ::= {{{kyx_program(d.body)}}};")
    lines += ["End.", "", "ProgramVariables"]
    lines += [f"  Real {n};" for n, _ in model.variables]
    _check(model.problem, allow_exp)
    lines += ["End.", "", "Problem", f"  {_formula(model.problem).replace('] ', ']')}", "End.", "", "End."]
    return "\n".join(lines) + "\n"
