"""Executable approximation of hybrid-program runs.

Discrete statements are interpreted directly; differential equations are integrated with
fixed-step RK4 and the exit from the evolution domain is located by bisection.  Every
nondeterministic decision draws from a keyed hash of (seed, site, iteration, attempt), so two
runs that visit the same site with the same seed make the same decision.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from dataclasses import dataclass, field, replace

from .ast import (
    And, Apply, Assign, AssignAny, Choice, Compare, Constant, Divide, FalseF, Implies, Loop, Minus,
    Neg, Not, ODE, Or, Plus, Power, Seq, Test, Times, TrueF, Variable, flatten_choice, flatten_seq,
    match_if, walk,
)
from .vars import all_vars, fv


class NumericOverflow(ArithmeticError):
    pass


class UnboundedAssign(ValueError):
    pass


class Unsupported(ValueError):
    pass


# ---------------------------------------------------------------- keyed randomness


def uniform(seed: int, *key) -> float:
    """Deterministic draw in [0, 1) from the seed and a key."""
    text = "|".join(str(k) for k in (seed,) + key).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "big") / 2.0**64


def derive_seed(seed: int, *key) -> int:
    text = "|".join(str(k) for k in (seed,) + key).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "big") >> 1


# ---------------------------------------------------------------- compilation

_OPS = {"<": "<", "<=": "<=", "=": "==", ">": ">", ">=": ">=", "!=": "!="}


def _div(a: float, b: float) -> float:
    if b == 0:
        raise NumericOverflow("division by zero")
    return a / b


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError as e:
        raise NumericOverflow(str(e)) from None


_GLOBALS = {"_div": _div, "_exp": _exp, "__builtins__": {}}


def py_term(t, names) -> str:
    """Python expression text; `names(x)` renders a variable read."""
    if isinstance(t, Variable):
        return names(t.name)
    if isinstance(t, Constant):
        return repr(float(t.value))
    if isinstance(t, Plus):
        return f"({py_term(t.left, names)} + {py_term(t.right, names)})"
    if isinstance(t, Minus):
        return f"({py_term(t.left, names)} - {py_term(t.right, names)})"
    if isinstance(t, Times):
        return f"({py_term(t.left, names)} * {py_term(t.right, names)})"
    if isinstance(t, Divide):
        return f"_div({py_term(t.left, names)}, {py_term(t.right, names)})"
    if isinstance(t, Neg):
        return f"(-{py_term(t.t, names)})"
    if isinstance(t, Power):
        return f"({py_term(t.base, names)} ** {t.exponent})"
    if isinstance(t, Apply) and t.fn == "exp":
        return f"_exp({py_term(t.args[0], names)})"
    raise Unsupported(f"cannot evaluate {type(t).__name__}")


def py_formula(f, names) -> str:
    if isinstance(f, Compare):
        return f"({py_term(f.left, names)} {_OPS[f.op]} {py_term(f.right, names)})"
    if isinstance(f, TrueF):
        return "True"
    if isinstance(f, FalseF):
        return "False"
    if isinstance(f, Not):
        return f"(not {py_formula(f.f, names)})"
    if isinstance(f, And):
        return f"({py_formula(f.left, names)} and {py_formula(f.right, names)})"
    if isinstance(f, Or):
        return f"({py_formula(f.left, names)} or {py_formula(f.right, names)})"
    if isinstance(f, Implies):
        return f"((not {py_formula(f.left, names)}) or {py_formula(f.right, names)})"
    raise Unsupported(f"cannot evaluate {type(f).__name__} in a simulation")


_CACHE: dict[int, tuple] = {}


def _compiled(node, kind: str):
    hit = _CACHE.get(id(node))
    if hit is not None and hit[0] is node:
        return hit[1]
    env = lambda x: f"e[{x!r}]"  # noqa: E731
    body = py_term(node, env) if kind == "term" else py_formula(node, env)
    fn = eval(f"lambda e: {body}", dict(_GLOBALS))
    _CACHE[id(node)] = (node, fn)
    return fn


def eval_term(t, env: dict) -> float:
    try:
        v = _compiled(t, "term")(env)
    except (OverflowError, ZeroDivisionError) as e:
        raise NumericOverflow(str(e)) from None
    if not math.isfinite(v):
        raise NumericOverflow(f"non-finite value {v}")
    return v


def eval_formula(f, env: dict) -> bool:
    try:
        return bool(_compiled(f, "formula")(env))
    except (OverflowError, ZeroDivisionError) as e:
        raise NumericOverflow(str(e)) from None


def _flow_source(ode: ODE) -> tuple[str, list[str], list[str]]:
    xs = list(ode.variables)
    params = sorted((set().union(*(fv(t) for _, t in ode.equations)) | fv(ode.domain)) - set(xs))
    idx = {x: i for i, x in enumerate(xs)}
    pidx = {p: i for i, p in enumerate(params)}

    def names_at(prefix):
        return lambda v: f"{prefix}{idx[v]}" if v in idx else f"p{pidx[v]}"

    n = len(xs)
    ys = ", ".join(f"y{i}" for i in range(n))
    lines = ["def make(" + ", ".join(f"p{i}" for i in range(len(params))) + "):"]
    lines.append(f"    def f({ys}):")
    lines.append("        return (" + ", ".join(py_term(t, names_at("y")) for _, t in ode.equations) + ",)")
    lines.append(f"    def dom({ys}):")
    lines.append("        return " + py_formula(ode.domain, names_at("y")))
    lines.append(f"    def step({ys}, s):")
    lines.append(f"        k1 = f({ys})")
    for stage, (src, frac) in enumerate((("k1", "0.5"), ("k2", "0.5"), ("k3", "1.0")), start=2):
        args = ", ".join(f"y{i} + {frac}*s*{src}[{i}]" for i in range(n))
        lines.append(f"        k{stage} = f({args})")
    lines.append(
        "        return ("
        + ", ".join(f"y{i} + s/6.0*(k1[{i}] + 2.0*k2[{i}] + 2.0*k3[{i}] + k4[{i}])" for i in range(n))
        + ",)"
    )
    lines.append("    return f, dom, step")
    return "\n".join(lines), xs, params


_FLOWS: dict[int, tuple] = {}


def _flow(ode: ODE):
    hit = _FLOWS.get(id(ode))
    if hit is not None and hit[0] is ode:
        return hit[1:]
    src, xs, params = _flow_source(ode)
    ns = dict(_GLOBALS)
    exec(src, ns)  # generated from the AST above, never from user text
    _FLOWS[id(ode)] = (ode, ns["make"], xs, params)
    return ns["make"], xs, params


def integrate(ode: ODE, env: dict, duration: float, h: float, record: bool = False):
    """Follow the ODE for `duration` or until the domain is left; None if the domain fails at once.

    Returns (end valuation, elapsed time, samples).
    """
    make, xs, params = _flow(ode)
    try:
        f, dom, step = make(*(env[p] for p in params))
        y = tuple(env[x] for x in xs)
        if not dom(*y):
            return None
        t = 0.0
        samples = [(0.0, y)] if record else None
        tol = h * 1e-3
        while t < duration:
            s = min(h, duration - t)
            nxt = step(*y, s)
            if not dom(*nxt):
                lo, hi = 0.0, s
                best = y
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    cand = step(*y, mid)
                    if dom(*cand):
                        lo, best = mid, cand
                    else:
                        hi = mid
                y, t = best, t + lo
                if record:
                    samples.append((t, y))
                break
            y, t = nxt, t + s
            if record:
                samples.append((t, y))
    except (OverflowError, ZeroDivisionError) as e:
        raise NumericOverflow(str(e)) from None
    if not all(math.isfinite(v) for v in y):
        raise NumericOverflow("non-finite state during continuous evolution")
    out = dict(env)
    out.update(zip(xs, y))
    if record:
        samples = [(tt, {**env, **dict(zip(xs, yy))}) for tt, yy in samples]
    return out, t, samples


# ---------------------------------------------------------------- runs


@dataclass(frozen=True)
class State:
    valuation: dict
    flag: str = "ok"  # ok | failed


@dataclass(frozen=True)
class Segment:
    kind: str  # point | flow
    duration: float
    samples: tuple  # (time, valuation)


@dataclass
class Trace:
    segments: list
    terminated: bool
    failed: bool
    boundaries: list  # valuation at the start and after every completed loop iteration
    final: State
    truncated: bool = False


@dataclass(frozen=True)
class NondetPolicy:
    seed: int = 0
    branch_rule: str = "uniform"  # uniform | enumerate
    bounds: dict = field(default_factory=dict)
    default_bounds: tuple | None = (0.0, 10.0)
    discrete: dict = field(default_factory=dict)  # name -> candidate values
    t_max: float | None = None
    dt: float | None = None
    dt_scale: float = 1e-3
    time_constant: str = "eps"
    loop_exit: float = 0.0
    max_attempts: int = 4
    key_by_site: bool = False

    def bounds_for(self, name: str) -> tuple:
        b = self.bounds.get(name, self.default_bounds)
        if b is None:
            raise UnboundedAssign(f"no sampling bounds for {name}")
        return b

    def step(self, env: dict) -> float:
        if self.dt is not None:
            return self.dt
        scale = env.get(self.time_constant)
        return self.dt_scale * scale if scale and scale > 0 else self.dt_scale

    def horizon(self, env: dict) -> float:
        if self.t_max is not None:
            return self.t_max
        scale = env.get(self.time_constant)
        return scale if scale and scale > 0 else 1.0


def sample_state(names, policy: NondetPolicy, tag: str = "init") -> dict:
    out = {}
    for n in sorted(names):
        u = uniform(policy.seed, tag, n)
        if n in policy.discrete:
            vals = policy.discrete[n]
            out[n] = float(vals[min(int(u * len(vals)), len(vals) - 1)])
        else:
            lo, hi = policy.bounds_for(n)
            out[n] = lo + u * (hi - lo)
    return out


def program_names(p) -> set[str]:
    return {x for x in all_vars(p) if not x.endswith("'")}


class _Runner:
    def __init__(self, policy: NondetPolicy, record: bool, max_inner: int = 3):
        self.policy = policy
        self.record = record
        self.max_inner = max_inner
        self.iteration = 0
        self.visits: dict = {}

    def draw(self, node, path: str, k: int = 0) -> float:
        key = str(node.span) if self.policy.key_by_site and node.span is not None else path
        attempt = self.visits.get((key, k), 0)
        self.visits[(key, k)] = attempt + 1
        return uniform(self.policy.seed, key, self.iteration, attempt, k)

    def candidates(self, node: AssignAny, path: str) -> list[float]:
        pol = self.policy
        u = self.draw(node, path)
        if node.var in pol.discrete:
            vals = [float(v) for v in pol.discrete[node.var]]
            shift = min(int(u * len(vals)), len(vals) - 1)
            return vals[shift:] + vals[:shift]
        lo, hi = pol.bounds_for(node.var)
        out = [lo + u * (hi - lo)]
        for k in range(1, pol.max_attempts):
            out.append(lo + self.draw(node, path, k) * (hi - lo))
        return out

    def exec(self, p, env: dict, path: str, segs):
        if isinstance(p, Seq):
            for e1, s1 in self.exec(p.a, env, path + ".0", segs):
                yield from self.exec(p.b, e1, path + ".1", s1)
        elif isinstance(p, Assign):
            new = dict(env)
            new[p.var] = eval_term(p.term, env)
            yield new, self._point(new, segs)
        elif isinstance(p, AssignAny):
            for v in self.candidates(p, path):
                new = dict(env)
                new[p.var] = v
                yield new, self._point(new, segs)
        elif isinstance(p, Test):
            if eval_formula(p.f, env):
                yield env, segs
        elif isinstance(p, Choice):
            first = self.policy.branch_rule == "enumerate" or self.draw(p, path) < 0.5
            order = [(p.a, ".0"), (p.b, ".1")] if first else [(p.b, ".1"), (p.a, ".0")]
            for branch, suffix in order:
                yield from self.exec(branch, env, path + suffix, segs)
        elif isinstance(p, ODE):
            duration = self.draw(p, path) * self.policy.horizon(env)
            res = integrate(p, env, duration, self.policy.step(env), self.record)
            if res is not None:
                out, elapsed, samples = res
                if self.record:
                    segs = (Segment("flow", elapsed, tuple(samples)), segs)
                yield out, segs
        elif isinstance(p, Loop):
            n = int(self.draw(p, path) * (self.max_inner + 1))
            yield from self._repeat(p.a, env, path + ".0", segs, n)
        else:
            raise Unsupported(f"cannot run {type(p).__name__}")

    def _repeat(self, body, env, path, segs, n):
        if n == 0:
            yield env, segs
            return
        for e1, s1 in self.exec(body, env, path, segs):
            yield from self._repeat(body, e1, path, s1, n - 1)
            return

    def _point(self, env, segs):
        if not self.record:
            return None
        return (Segment("point", 0.0, ((0.0, env),)), segs)


def _unwind(segs) -> list:
    out = []
    while segs is not None:
        seg, segs = segs
        out.append(seg)
    return out[::-1]


def run(p, init: dict, policy: NondetPolicy, max_loop_iters: int = 10, record: bool = False) -> Trace:
    """One run of `p`; a top-level loop is unrolled at most `max_loop_iters` times."""
    missing = sorted(program_names(p) - set(init))
    if missing:
        raise ValueError(f"initial state does not define {', '.join(missing)}")
    env = {k: float(v) for k, v in init.items()}
    r = _Runner(policy, record)
    boundaries = [dict(env)]
    segments: list = []
    if isinstance(p, Loop):
        for i in range(max_loop_iters):
            if policy.loop_exit > 0 and uniform(policy.seed, "exit", i) < policy.loop_exit:
                return Trace(segments, True, False, boundaries, State(env))
            r.iteration, r.visits = i, {}
            res = next(r.exec(p.a, env, "0", None), None)
            if res is None:
                if record:
                    segments.append(Segment("point", 0.0, ((0.0, dict(env)),)))
                return Trace(segments, True, True, boundaries, State(env, "failed"))
            env, segs = res
            segments.extend(_unwind(segs))
            boundaries.append(env)
        return Trace(segments, False, False, boundaries, State(env), truncated=True)
    res = next(r.exec(p, env, "0", None), None)
    if res is None:
        return Trace(segments, True, True, boundaries, State(env, "failed"))
    env, segs = res
    boundaries.append(env)
    return Trace(_unwind(segs), True, False, boundaries, State(env))


def trace_to_csv(trace: Trace) -> str:
    """Time column followed by the variables in sorted order."""
    names = sorted(trace.boundaries[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time"] + names)
    clock = 0.0
    for seg in trace.segments:
        for t, val in seg.samples:
            w.writerow([repr(clock + t)] + [repr(val[n]) for n in names])
        clock += seg.duration
    return buf.getvalue()


# ---------------------------------------------------------------- reports


@dataclass
class SimulationReport:
    runs: int = 0
    failures: int = 0
    eq_violations: list = field(default_factory=list)  # (iteration, (left, right), seed)
    max_eq_residual: float = 0.0
    wall_time: float = 0.0
    truncated: int = 0

    def to_json(self) -> dict:
        return {
            "runs": self.runs,
            "failures": self.failures,
            "truncated": self.truncated,
            "max_eq_residual": self.max_eq_residual,
            "eq_violations": [
                {"iteration": i, "left": dict(sorted(a.items())), "right": dict(sorted(b.items())), "seed": s}
                for i, (a, b), s in self.eq_violations
            ],
        }


def _exceeds(a: float, b: float, tol: float) -> bool:
    return abs(a - b) > tol * (1.0 + abs(a))


def composition_policy(comp, policy: NondetPolicy) -> NondetPolicy:
    """Choice variables range over {1, 0}; hoisted `x := *` sites keep the bounds of x."""
    discrete = dict(policy.discrete)
    bounds = dict(policy.bounds)
    origin = getattr(comp, "assign_origin", {}) or {}
    for c in comp.choice_vars:
        if c in origin:
            if origin[c] in policy.bounds:
                bounds.setdefault(c, policy.bounds[origin[c]])
        else:
            discrete.setdefault(c, (1.0, 0.0))
    return replace(policy, discrete=discrete, bounds=bounds)


def check_composition(comp, policy: NondetPolicy, n_runs: int = 100, max_loop_iters: int = 20, tol: float = 1e-6) -> SimulationReport:
    """Co-simulate the composed loop from states satisfying the equivalence formula."""
    start = time.perf_counter()
    policy = composition_policy(comp, policy)
    program = comp.loop
    names = program_names(program)
    pairs = [(x, comp.renaming.name(x)) for x in comp.eq_set]
    report = SimulationReport()
    for r in range(n_runs):
        seed = derive_seed(policy.seed, "run", r)
        pol = replace(policy, seed=seed)
        init = sample_state(names, pol)
        for x, y in pairs:
            init[y] = init[x]
        report.runs += 1
        try:
            trace = run(program, init, pol, max_loop_iters)
        except NumericOverflow:
            report.failures += 1
            continue
        report.failures += trace.failed
        report.truncated += trace.truncated
        for i, b in enumerate(trace.boundaries[1:], start=1):
            bad = False
            for x, y in pairs:
                report.max_eq_residual = max(report.max_eq_residual, abs(b[x] - b[y]))
                bad = bad or _exceeds(b[x], b[y], tol)
            if bad:
                report.eq_violations.append((i, ({x: b[x] for x, _ in pairs}, {y: b[y] for _, y in pairs}), seed))
                break
    report.wall_time = time.perf_counter() - start
    return report


# ---------------------------------------------------------------- falsification


@dataclass(frozen=True)
class CandidateCounterexample:
    run: int
    seed: int
    iteration: int
    initial: dict
    left: dict
    right: dict
    deterministic: bool
    condition: str

    def to_json(self) -> dict:
        return {
            "run": self.run,
            "seed": self.seed,
            "iteration": self.iteration,
            "initial": dict(sorted(self.initial.items())),
            "left": dict(sorted(self.left.items())),
            "right": dict(sorted(self.right.items())),
            "deterministic": self.deterministic,
            "condition": self.condition,
        }


_DISJOINT = {"<": {"LT"}, "<=": {"LT", "EQ"}, "=": {"EQ"}, ">": {"GT"}, ">=": {"GT", "EQ"}, "!=": {"LT", "GT"}}
_FLIP = {"<": ">", "<=": ">=", "=": "=", ">": "<", ">=": "<=", "!=": "!="}


def _exclusive(guards) -> bool:
    """Pairwise-disjoint comparisons of one term pair."""
    if not all(isinstance(g, Compare) for g in guards):
        return False
    pair = (guards[0].left, guards[0].right)
    covers = []
    for g in guards:
        if (g.left, g.right) == pair:
            covers.append(_DISJOINT[g.op])
        elif (g.right, g.left) == pair:
            covers.append(_DISJOINT[_FLIP[g.op]])
        else:
            return False
    return all(not (a & b) for i, a in enumerate(covers) for b in covers[i + 1:])


def deterministic(p) -> tuple[bool, str]:
    """Whether every choice of `p` is resolved by its guards, so coupled runs cannot disagree."""
    for n in walk(p):
        if isinstance(n, AssignAny):
            return False, f"nondeterministic assignment to {n.var} at {n.span}"
        if isinstance(n, Choice) and match_if(n) is None:
            heads = [flatten_seq(b)[0] for b in flatten_choice(n)]
            if not all(isinstance(h, Test) for h in heads) or not _exclusive([h.f for h in heads]):
                return False, f"choice at {n.span} is not resolved by disjoint guards"
    return True, "original program is deterministic given coupled choices and durations"


def falsify_equiv(goal, sensors, policy: NondetPolicy, budget: int = 1000, max_loop_iters: int = 5, tol: float = 1e-6):
    """Search coupled runs of both sides for a loop boundary where the H-projections differ."""
    left, right = goal.left, goal.right
    names = program_names(left) | program_names(right) | {x for x in goal.h if not x.endswith("'")}
    h = sorted(x for x in goal.h if not x.endswith("'"))
    det, why = deterministic(left)
    if not det:
        why = "candidate only: " + why
    for r in range(budget):
        seed = derive_seed(policy.seed, "run", r)
        pol = replace(policy, seed=seed)
        init = sample_state(names, pol)
        try:
            tl = run(left, init, pol, max_loop_iters)
            tr = run(right, init, pol, max_loop_iters)
        except NumericOverflow:
            continue
        for i, (a, b) in enumerate(zip(tl.boundaries, tr.boundaries)):
            if any(_exceeds(a[x], b[x], tol) for x in h):
                return CandidateCounterexample(
                    r, seed, i, init, {x: a[x] for x in h}, {x: b[x] for x in h}, det, why
                )
    return None
