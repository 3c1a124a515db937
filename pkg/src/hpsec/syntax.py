"""Concrete syntax: lexer, parser and pretty-printer for `.hp` model files."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from fractions import Fraction

from .ast import (
    And, Apply, Assign, AssignAny, Box, Choice, Compare, Constant, CycleError, Definition, Divide,
    Exists, FALSE, FUNCTIONS, FalseF, Forall, FormulaRef, Implies, Loop, Minus, Model, Neg, Not,
    ODE, Or, Plus, Power, ProgramRef, Seq, Span, TRUE, Test, Times, TrueF, Variable, map_children,
    match_if,
)


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    message: str
    span: Span

    def __str__(self) -> str:
        return f"{self.span.file}:{self.span.line}:{self.span.column}: {self.severity}: {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


# ---------------------------------------------------------------- lexer

UNICODE = {
    "∪": "++", "≤": "<=", "≥": ">=", "≠": "!=", "∧": "&", "∨": "|",
    "¬": "!", "→": "->", "∀": "\\forall", "∃": "\\exists", "·": "*",
    "×": "*", "−": "-", "′": "'",
}
ASCII_ALIASES = {"&&": "&", "||": "|"}
KEYWORDS = {"true", "false", "if", "then", "else", "Definitions", "ProgramVariables", "Problem", "End"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<low>/\*@low\*/)
  | (?P<block>/\*)
  | (?P<line>//[^\n]*)
  | (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<quant>\\forall|\\exists)
  | (?P<op>::=|:=|\+\+|<=|>=|!=|->|&&|\|\||[-+*/^()\[\]{};,&|!?.<>='])
  | (?P<uni>[∪≤≥≠∧∨¬→∀∃·×−′])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num | ident | op | low | eof
    value: str
    line: int
    col: int
    offset: int
    length: int


def tokenize(source: str, file: str = "<input>") -> list[Token]:
    tokens: list[Token] = []
    pos, line, col = 0, 1, 1

    def advance(text: str) -> None:
        nonlocal line, col
        nl = text.count("\n")
        if nl:
            line += nl
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)

    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError([Diagnostic("error", f"unexpected character {source[pos]!r}", Span(file, line, col, 1))])
        kind = m.lastgroup
        text = m.group()
        if kind == "block":
            end = source.find("*/", pos + 2)
            if end < 0:
                raise ParseError([Diagnostic("error", "unterminated comment", Span(file, line, col, 2))])
            text = source[pos:end + 2]
        elif kind == "num":
            tokens.append(Token("num", text, line, col, pos, len(text)))
        elif kind == "ident":
            tokens.append(Token("ident", text, line, col, pos, len(text)))
        elif kind in ("op", "quant"):
            tokens.append(Token("op", ASCII_ALIASES.get(text, text), line, col, pos, len(text)))
        elif kind == "uni":
            tokens.append(Token("op", UNICODE[text], line, col, pos, len(text)))
        elif kind == "low":
            tokens.append(Token("low", text, line, col, pos, len(text)))
        advance(text)
        pos += len(text)
    tokens.append(Token("eof", "", line, col, pos, 0))
    return tokens


# ---------------------------------------------------------------- parser


class _Fail(Exception):
    pass


class Parser:
    def __init__(self, source: str, file: str = "<input>"):
        self.file = file
        self.toks = tokenize(source, file)
        self.i = 0
        self.far = (-1, "")

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, value: str, kind: str = "op") -> bool:
        t = self.tok
        return t.kind == kind and t.value == value

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        idx = self.toks.index(tok) if tok is not self.tok else self.i
        if idx >= self.far[0]:
            self.far = (idx, message)
        raise _Fail(message)

    def expect(self, value: str, kind: str = "op") -> Token:
        if not self.at(value, kind):
            got = self.tok.value or "end of input"
            self.fail(f"expected '{value}' but found '{got}'")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident" or t.value in KEYWORDS:
            self.fail(f"expected identifier but found '{t.value or 'end of input'}'")
        self.i += 1
        return t

    def span(self, start: Token) -> Span:
        prev = self.toks[self.i - 1] if self.i > 0 else start
        length = max(prev.offset + prev.length - start.offset, 0)
        return Span(self.file, start.line, start.col, length)

    def attempt(self, fn):
        save = self.i
        try:
            return fn()
        except _Fail:
            self.i = save
            return None

    def error(self) -> ParseError:
        idx, msg = self.far
        t = self.toks[max(idx, 0)] if idx >= 0 else self.tok
        return ParseError([Diagnostic("error", msg or "syntax error", Span(self.file, t.line, t.col, t.length))])

    # ------------------------------------------------------------ terms
    def term(self):
        start = self.tok
        left = self.product()
        while self.tok.kind == "op" and self.tok.value in ("+", "-"):
            op = self.tok.value
            self.i += 1
            right = self.product()
            left = (Plus if op == "+" else Minus)(left, right, span=self.span(start))
        return left

    def product(self):
        start = self.tok
        left = self.unary()
        while self.tok.kind == "op" and self.tok.value in ("*", "/"):
            op = self.tok.value
            optok = self.tok
            self.i += 1
            right = self.unary()
            if op == "*":
                left = Times(left, right, span=self.span(start))
            else:
                try:
                    left = Divide(left, right, span=self.span(start))
                except ValueError:
                    self.fail("division by the constant 0", optok)
        return left

    def unary(self):
        start = self.tok
        if self.at("-"):
            self.i += 1
            if self.tok.kind == "num" and not (self.peek().kind == "op" and self.peek().value == "^"):
                num = self.tok
                self.i += 1
                return Constant(-self.number(num), span=self.span(start))
            return Neg(self.unary(), span=self.span(start))
        return self.power()

    def power(self):
        start = self.tok
        base = self.primary()
        while self.at("^"):
            self.i += 1
            t = self.tok
            if t.kind != "num" or not t.value.isdigit():
                self.fail("exponent must be a nonnegative integer literal")
            self.i += 1
            base = Power(base, int(t.value), span=self.span(start))
        return base

    def number(self, t: Token) -> Fraction:
        try:
            return _number(t.value)
        except _BadNumber as e:
            self.fail(str(e), t)

    def primary(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Constant(self.number(t), span=self.span(t))
        if t.kind == "ident" and t.value not in KEYWORDS:
            self.i += 1
            if self.at("("):
                if t.value not in FUNCTIONS:
                    self.fail(f"unknown function '{t.value}'", t)
                self.i += 1
                args = [self.term()]
                while self.at(","):
                    self.i += 1
                    args.append(self.term())
                self.expect(")")
                if len(args) != FUNCTIONS[t.value]:
                    self.fail(f"function '{t.value}' takes {FUNCTIONS[t.value]} argument(s)", t)
                return Apply(t.value, tuple(args), span=self.span(t))
            return Variable(t.value, span=self.span(t))
        if self.at("("):
            self.i += 1
            inner = self.term()
            self.expect(")")
            return inner
        self.fail(f"expected a term but found '{t.value or 'end of input'}'")

    # ------------------------------------------------------------ formulas
    def formula(self):
        start = self.tok
        left = self.disjunction()
        if self.at("->"):
            self.i += 1
            right = self.formula()
            return Implies(left, right, span=self.span(start))
        return left

    def disjunction(self):
        start = self.tok
        left = self.conjunction()
        if self.at("|"):
            self.i += 1
            return Or(left, self.disjunction(), span=self.span(start))
        return left

    def conjunction(self):
        start = self.tok
        left = self.funary()
        if self.at("&"):
            self.i += 1
            return And(left, self.conjunction(), span=self.span(start))
        return left

    def funary(self):
        start = self.tok
        if self.at("!"):
            self.i += 1
            return Not(self.funary(), span=self.span(start))
        if self.at("\\forall") or self.at("\\exists"):
            cls = Forall if self.tok.value == "\\forall" else Exists
            self.i += 1
            var = self.ident().value
            return cls(var, self.funary(), span=self.span(start))
        if self.at("["):
            self.i += 1
            prog = self.program()
            self.expect("]")
            return Box(prog, self.funary(), span=self.span(start))
        return self.fatom()

    def fatom(self):
        start = self.tok
        if self.at("true", "ident"):
            self.i += 1
            return TrueF(span=self.span(start))
        if self.at("false", "ident"):
            self.i += 1
            return FalseF(span=self.span(start))
        cmp = self.attempt(self.comparison)
        if cmp is not None:
            return cmp
        if self.at("("):
            self.i += 1
            inner = self.formula()
            self.expect(")")
            return inner
        if self.tok.kind == "ident" and self.tok.value not in KEYWORDS:
            self.i += 1
            return FormulaRef(start.value, span=self.span(start))
        self.fail(f"expected a formula but found '{self.tok.value or 'end of input'}'")

    def comparison(self):
        start = self.tok
        left = self.term()
        t = self.tok
        if t.kind != "op" or t.value not in ("<", "<=", "=", ">", ">=", "!="):
            self.fail(f"expected a comparison operator but found '{t.value or 'end of input'}'")
        self.i += 1
        right = self.term()
        return Compare(t.value, left, right, span=self.span(start))

    # ------------------------------------------------------------ programs
    def program(self):
        start = self.tok
        left = self.sequence()
        if self.at("++"):
            self.i += 1
            return Choice(left, self.program(), span=self.span(start))
        return left

    def _atom_start(self) -> bool:
        t = self.tok
        if t.kind == "low":
            return True
        if t.kind == "ident":
            return t.value not in KEYWORDS or t.value == "if"
        return t.kind == "op" and t.value in ("{", "(", "?")

    def sequence(self):
        start = self.tok
        items = [self.atom()]
        while self.at(";"):
            self.i += 1
            if not self._atom_start():
                break
            items.append(self.atom())
        out = items[-1]
        for p in reversed(items[:-1]):
            out = Seq(p, out, span=self.span(start))
        return out

    def atom(self):
        low = False
        if self.tok.kind == "low":
            low = True
            self.i += 1
        start = self.tok
        node = self.base_atom()
        if low:
            if isinstance(node, (Choice, AssignAny)):
                node = replace(node, low=True)
            else:
                self.fail("/*@low*/ applies to a choice or a nondeterministic assignment", start)
        return node

    def base_atom(self):
        start = self.tok
        if self.at("{") or self.at("("):
            close = "}" if self.tok.value == "{" else ")"
            if close == "}" and self.peek().kind == "ident" and self.peek(2).value == "'" and self.peek(3).value == "=":
                return self.ode()
            self.i += 1
            inner = self.program()
            self.expect(close)
            if self.at("*"):
                self.i += 1
                return Loop(inner, span=self.span(start))
            return inner
        if self.at("?"):
            self.i += 1
            return Test(self.formula(), span=self.span(start))
        if self.at("if", "ident"):
            self.i += 1
            self.expect("(")
            cond = self.formula()
            self.expect(")")
            if self.at("then", "ident"):
                self.i += 1
            then = self.atom()
            self.expect("else", "ident")
            other = self.atom()
            sp = self.span(start)
            return Choice(Seq(Test(cond, span=sp), then, span=sp), Seq(Test(Not(cond), span=sp), other, span=sp), span=sp)
        name = self.ident()
        if self.at(":="):
            self.i += 1
            if self.at("*"):
                self.i += 1
                return AssignAny(name.value, span=self.span(start))
            return Assign(name.value, self.term(), span=self.span(start))
        return ProgramRef(name.value, span=self.span(start))

    def ode(self):
        start = self.expect("{")
        eqs = []
        while True:
            x = self.ident()
            self.expect("'")
            self.expect("=")
            eqs.append((x.value, self.term()))
            if not self.at(","):
                break
            self.i += 1
        domain = TRUE
        if self.at("&"):
            self.i += 1
            domain = self.formula()
        self.expect("}")
        names = [x for x, _ in eqs]
        if len(set(names)) != len(names):
            self.fail("duplicate variable in differential equation", start)
        return ODE(tuple(eqs), domain, span=self.span(start))

    # ------------------------------------------------------------ model
    def model(self):
        defs: list[Definition] = []
        variables: list[tuple[str, str, Span]] = []
        if self.at("Definitions", "ident"):
            self.i += 1
            self.expect(".")
            while not (self.at("ProgramVariables", "ident") or self.at("Problem", "ident")):
                defs.extend(self.definition())
        if self.at("ProgramVariables", "ident"):
            self.i += 1
            self.expect(".")
            while not self.at("Problem", "ident"):
                variables.extend(self.declaration())
        self.expect("Problem", "ident")
        self.expect(".")
        problem = self.formula()
        self.expect("End", "ident")
        self.expect(".")
        if self.tok.kind != "eof":
            self.fail(f"unexpected '{self.tok.value}' after End.")
        return defs, variables, problem

    def sort(self) -> str:
        t = self.tok
        if t.kind != "ident" or t.value not in ("R", "B", "HP"):
            self.fail(f"expected a sort (R, B or HP) but found '{t.value or 'end of input'}'")
        self.i += 1
        return t.value

    def definition(self) -> list[Definition]:
        sort_tok = self.tok
        sort = self.sort()
        names = [self.ident()]
        while self.at(","):
            self.i += 1
            names.append(self.ident())
        if self.at("::="):
            if len(names) > 1:
                self.fail("only one name may be defined per '::='", names[1])
            self.i += 1
            body = {"R": self.term, "B": self.formula, "HP": self.program}[sort]()
            self.expect(".")
            return [Definition(names[0].value, sort, body, span=self.span(sort_tok))]
        self.expect(".")
        if sort != "R":
            self.fail(f"{sort} abbreviation '{names[0].value}' needs a '::=' body", names[0])
        return [Definition(n.value, "R", None, span=Span(self.file, n.line, n.col, n.length)) for n in names]

    def declaration(self):
        sort = self.tok
        if self.sort() != "R":
            self.fail("program variables must be declared with sort R", sort)
        names = [self.ident()]
        while self.at(","):
            self.i += 1
            names.append(self.ident())
        self.expect(".")
        return [(n.value, "R", Span(self.file, n.line, n.col, n.length)) for n in names]


class _BadNumber(ValueError):
    pass


def _number(text: str) -> Fraction:
    mant, _, exp = text.lower().partition("e")
    if exp and abs(int(exp)) > 400:
        raise _BadNumber(f"numeric literal {text} is out of range")
    return Fraction(text)


def _parse_with(source: str, rule: str, file: str = "<input>"):
    try:
        p = Parser(source, file)
        node = getattr(p, rule)()
        if p.tok.kind != "eof":
            p.fail(f"unexpected '{p.tok.value}'")
        return node
    except _Fail:
        raise p.error() from None
    except RecursionError:
        raise ParseError([Diagnostic("error", "input nested too deeply", Span(file, 1, 1, 0))]) from None


def parse_term(source: str, file: str = "<input>"):
    return _parse_with(source, "term", file)


def parse_formula(source: str, file: str = "<input>"):
    return _parse_with(source, "formula", file)


def parse_program(source: str, file: str = "<input>"):
    return _parse_with(source, "program", file)


# ---------------------------------------------------------------- name resolution


class _Resolver:
    def __init__(self, file: str, defs: list[Definition], variables):
        self.file = file
        self.diags: list[Diagnostic] = []
        self.sorts: dict[str, str] = {}
        self.kind: dict[str, str] = {}
        for d in defs:
            self.declare(d.name, d.sort, "constant" if d.body is None else "abbreviation", d.span)
        for name, sort, span in variables:
            self.declare(name, sort, "variable", span)

    def declare(self, name: str, sort: str, kind: str, span: Span | None) -> None:
        if name in self.sorts:
            self.err(f"duplicate declaration of '{name}'", span)
            return
        self.sorts[name] = sort
        self.kind[name] = kind

    def err(self, msg: str, span: Span | None) -> None:
        self.diags.append(Diagnostic("error", msg, span or Span(self.file, 1, 1, 0)))

    def real(self, name: str, bound: frozenset) -> bool:
        return name in bound or self.sorts.get(name) == "R"

    def resolve(self, node, bound: frozenset = frozenset()):
        if isinstance(node, Variable):
            if not self.real(node.name, bound):
                if node.name in self.sorts:
                    self.err(f"sort mismatch: {self.sorts[node.name]} name '{node.name}' used as a term", node.span)
                else:
                    self.err(f"undeclared identifier '{node.name}'", node.span)
            return node
        if isinstance(node, FormulaRef):
            if node.name not in bound and self.sorts.get(node.name) == "B":
                return node
            if self.real(node.name, bound):
                # a real-valued name used as a condition reads as `name != 0`
                return Compare("!=", Variable(node.name, span=node.span), Constant(0), span=node.span)
            if node.name in self.sorts:
                self.err(f"sort mismatch: {self.sorts[node.name]} name '{node.name}' used as a formula", node.span)
            else:
                self.err(f"undeclared identifier '{node.name}'", node.span)
            return node
        if isinstance(node, ProgramRef):
            if self.sorts.get(node.name) != "HP":
                if node.name in self.sorts:
                    self.err(f"sort mismatch: {self.sorts[node.name]} name '{node.name}' used as a program", node.span)
                else:
                    self.err(f"undeclared program '{node.name}'", node.span)
            return node
        if isinstance(node, (Assign, AssignAny)):
            self.target(node.var, node.span)
        if isinstance(node, ODE):
            for x in node.variables:
                self.target(x, node.span)
        if isinstance(node, (Forall, Exists)):
            inner = bound | {node.var}
            return map_children(node, lambda c: self.resolve(c, inner))
        return map_children(node, lambda c: self.resolve(c, bound))

    def target(self, name: str, span: Span | None) -> None:
        kind = self.kind.get(name)
        if kind is None:
            self.err(f"undeclared variable '{name}'", span)
        elif kind != "variable":
            self.err(f"cannot assign to {kind} '{name}'", span)


def _check_cycles(defs: list[Definition], res: _Resolver) -> None:
    from .ast import walk

    deps: dict[str, set[str]] = {}
    defined = {e.name for e in defs if e.body is not None}
    for d in defs:
        if d.body is None:
            continue
        names = set()
        for n in walk(d.body):
            if isinstance(n, (ProgramRef, FormulaRef, Variable)):
                names.add(n.name)
        deps[d.name] = names & defined
    state: dict[str, int] = {}

    def visit(n: str, path: list[str]) -> None:
        state[n] = 1
        for m in sorted(deps.get(n, ())):
            if state.get(m) == 1:
                d = next(e for e in defs if e.name == n)
                res.err(f"recursive abbreviation: {' -> '.join(path + [m])}", d.span)
            elif state.get(m) is None:
                visit(m, path + [m])
        state[n] = 2

    for d in defs:
        if d.name in deps and d.name not in state:
            visit(d.name, [d.name])


def parse_model(source: str, file: str = "<input>") -> Model:
    """Parse a model file; raises ParseError carrying diagnostics."""
    p = None
    try:
        p = Parser(source, file)
        defs, variables, problem = p.model()
    except _Fail:
        raise p.error() from None
    except RecursionError:
        raise ParseError([Diagnostic("error", "input nested too deeply", Span(file, 1, 1, 0))]) from None
    res = _Resolver(file, defs, variables)
    try:
        defs = [replace(d, body=res.resolve(d.body)) if d.body is not None else d for d in defs]
        problem = res.resolve(problem)
    except RecursionError:
        raise ParseError([Diagnostic("error", "input nested too deeply", Span(file, 1, 1, 0))]) from None
    _check_cycles(defs, res)
    if res.diags:
        raise ParseError(res.diags)
    return Model(tuple(defs), tuple((n, s) for n, s, _ in variables), problem)


def load_model(path) -> Model:
    from pathlib import Path

    path = Path(path)
    return parse_model(path.read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------- printer


def _decimal(v: Fraction) -> str | None:
    if v.denominator == 1:
        return str(v.numerator)
    d = v.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return None
    k = max(twos, fives)
    scaled = v.numerator * 10**k // v.denominator
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled)).rjust(k + 1, "0")
    return f"{sign}{digits[:-k]}.{digits[-k:]}".rstrip("0").rstrip(".")


def _constant(v: Fraction) -> str:
    text = _decimal(abs(v))
    if text is None:
        text = f"{abs(v).numerator}/{abs(v).denominator}"
        return f"(-{text})" if v < 0 else f"({text})"
    return f"(-{text})" if v < 0 else text


def print_term(t, level: int = 0) -> str:
    if isinstance(t, Variable):
        return t.name
    if isinstance(t, Constant):
        return _constant(t.value)
    if isinstance(t, Apply):
        return f"{t.fn}({', '.join(print_term(a) for a in t.args)})"
    if isinstance(t, (Plus, Minus)):
        s, mine = f"{print_term(t.left, 1)} {'+' if isinstance(t, Plus) else '-'} {print_term(t.right, 2)}", 1
    elif isinstance(t, (Times, Divide)):
        s, mine = f"{print_term(t.left, 2)}{'*' if isinstance(t, Times) else '/'}{print_term(t.right, 3)}", 2
    elif isinstance(t, Neg):
        inner = print_term(t.t, 3)
        if isinstance(t.t, Constant) or inner.startswith("-"):
            inner = f"({inner})"
        s, mine = f"-{inner}", 3
    elif isinstance(t, Power):
        s, mine = f"{print_term(t.base, 5)}^{t.exponent}", 4
    else:
        raise TypeError(t)
    return f"({s})" if mine < level else s


def print_formula(f, level: int = 0, prog=None) -> str:
    prog = prog or print_program
    rec = lambda g, lv: print_formula(g, lv, prog)  # noqa: E731
    if isinstance(f, Compare):
        return f"{print_term(f.left)} {f.op} {print_term(f.right)}"
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, FormulaRef):
        return f.name
    if isinstance(f, Implies):
        s, mine = f"{rec(f.left, 2)} -> {rec(f.right, 1)}", 1
    elif isinstance(f, Or):
        s, mine = f"{rec(f.left, 3)} | {rec(f.right, 2)}", 2
    elif isinstance(f, And):
        s, mine = f"{rec(f.left, 4)} & {rec(f.right, 3)}", 3
    elif isinstance(f, Not):
        inner = rec(f.f, 4)
        s, mine = (f"!({inner})" if isinstance(f.f, Compare) else f"!{inner}"), 4
    elif isinstance(f, (Forall, Exists)):
        q = "\\forall" if isinstance(f, Forall) else "\\exists"
        s, mine = f"{q} {f.var} ({rec(f.f, 0)})", 4
    elif isinstance(f, Box):
        s, mine = f"[{prog(f.program)}]{rec(f.f, 4)}", 4
    else:
        raise TypeError(f)
    return f"({s})" if mine < level else s


def _braced(p) -> str:
    return "{" + print_program(p) + "}"


def print_program(p, level: int = 0) -> str:
    if isinstance(p, Choice):
        m = None if p.low else match_if(p)
        if m is not None:
            cond, a, b = m
            return f"if ({print_formula(cond)}) then {print_program(a, 3)} else {print_program(b, 3)}"
        if p.low:
            return f"/*@low*/ {{{print_program(p.a, 2)} ++ {print_program(p.b, 1)}}}"
        s = f"{print_program(p.a, 2)} ++ {print_program(p.b, 1)}"
        return "{" + s + "}" if level > 1 else s
    if isinstance(p, Seq):
        s = f"{print_program(p.a, 3)}; {print_program(p.b, 2)}"
        return "{" + s + "}" if level > 2 else s
    if isinstance(p, Assign):
        return f"{p.var} := {print_term(p.term)}"
    if isinstance(p, AssignAny):
        return f"{'/*@low*/ ' if p.low else ''}{p.var} := *"
    if isinstance(p, Test):
        return f"?{print_formula(p.f)}"
    if isinstance(p, ODE):
        eqs = ", ".join(f"{x}' = {print_term(t)}" for x, t in p.equations)
        dom = "" if isinstance(p.domain, TrueF) else f" & {print_formula(p.domain)}"
        return "{" + eqs + dom + "}"
    if isinstance(p, Loop):
        return _braced(p.a) + "*"
    if isinstance(p, ProgramRef):
        return p.name
    raise TypeError(p)


def print_node(node) -> str:
    from .ast import FORMULA_TYPES, PROGRAM_TYPES

    if isinstance(node, PROGRAM_TYPES):
        return print_program(node)
    if isinstance(node, FORMULA_TYPES):
        return print_formula(node)
    return print_term(node)


def print_model(model: Model) -> str:
    lines = ["Definitions."]
    for d in model.definitions:
        if d.body is None:
            lines.append(f"  {d.sort} {d.name}.")
        else:
            lines.append(f"  {d.sort} {d.name} ::= {print_node(d.body)}.")
    lines.append("ProgramVariables.")
    for name, sort in model.variables:
        lines.append(f"  {sort} {name}.")
    lines.append("Problem.")
    lines.append(f"  {print_formula(model.problem)}")
    lines.append("End.")
    return "\n".join(lines) + "\n"
