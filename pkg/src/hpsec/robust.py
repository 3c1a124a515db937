"""Decomposition proofs of H-equivalence between a program and its attacked version."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from itertools import islice

from .ast import (
    And, Assign, AssignAny, Choice, Constant, Loop, ODE, Seq, Test, expand, flatten_seq, normalize,
    same_program, seq, walk,
)
from .attack import attack
from .sim import NumericOverflow, eval_formula, eval_term, uniform
from .syntax import parse_program, print_program
from .transform import split_problem
from .vars import all_vars, fv, fv_formula

RULES = {"Self": 0, "Subset": 1, "Unmodified": 1, "SeqCompose": 2, "LoopLift": 1, "BaseOracle": 0, "Assumed": 0}


class Unsupported(ValueError):
    pass


@dataclass(frozen=True)
class EquivGoal:
    left: object
    right: object
    h: frozenset

    def __post_init__(self) -> None:
        object.__setattr__(self, "h", frozenset(self.h))

    def to_json(self) -> dict:
        return {"left": print_program(self.left), "right": print_program(self.right), "h": sorted(self.h)}

    @classmethod
    def from_json(cls, d: dict) -> "EquivGoal":
        return cls(parse_program(d["left"]), parse_program(d["right"]), frozenset(d["h"]))


def goal_digest(goal: EquivGoal) -> str:
    text = "\n".join([print_program(normalize(goal.left)), print_program(normalize(goal.right)), ",".join(sorted(goal.h))])
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class OracleConfig:
    n_states: int = 40
    n_values: int = 6
    bounds: dict = field(default_factory=dict)
    default_bounds: tuple = (-10.0, 10.0)
    seed: int = 0
    tol: float = 1e-9
    max_outcomes: int = 20000


@dataclass(frozen=True)
class OracleReport:
    passed: bool
    goal_digest: str
    states: int = 0
    outcomes: int = 0
    inconclusive: int = 0
    seed: int = 0
    counterexample: dict | None = None

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "goal_digest": self.goal_digest,
            "states": self.states,
            "outcomes": self.outcomes,
            "inconclusive": self.inconclusive,
            "seed": self.seed,
            "counterexample": self.counterexample,
        }

    @classmethod
    def from_json(cls, d: dict) -> "OracleReport":
        return cls(
            bool(d["passed"]), d["goal_digest"], d.get("states", 0), d.get("outcomes", 0),
            d.get("inconclusive", 0), d.get("seed", 0), d.get("counterexample"),
        )


@dataclass(frozen=True)
class Certificate:
    goal: EquivGoal
    rule: str
    side_conditions: tuple = ()  # (description, frozenset of names)
    children: tuple = ()
    oracle_report: OracleReport | None = None

    @property
    def deductive(self) -> bool:
        return self.rule not in ("BaseOracle", "Assumed") and all(c.deductive for c in self.children)

    def rules(self) -> list[str]:
        """Rule names in pre-order."""
        out = [self.rule]
        for c in self.children:
            out += c.rules()
        return out

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "goal": self.goal.to_json(),
            "side_conditions": [[d, sorted(s)] for d, s in self.side_conditions],
            "children": [c.to_json() for c in self.children],
            "oracle_report": self.oracle_report.to_json() if self.oracle_report else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Certificate":
        return cls(
            EquivGoal.from_json(d["goal"]),
            d["rule"],
            tuple((desc, frozenset(names)) for desc, names in d.get("side_conditions", [])),
            tuple(cls.from_json(c) for c in d.get("children", [])),
            OracleReport.from_json(d["oracle_report"]) if d.get("oracle_report") else None,
        )


@dataclass(frozen=True)
class Unproven:
    reason: str
    attempts: tuple = ()  # (prefix length, oracle passed)

    def to_json(self) -> dict:
        return {"reason": self.reason, "attempts": [list(a) for a in self.attempts]}


@dataclass(frozen=True)
class StrategyConfig:
    sensors: frozenset | None = None
    oracle: OracleConfig = OracleConfig()


# ---------------------------------------------------------------- checking


def _loop_or_ode(p) -> bool:
    return any(isinstance(n, (Loop, ODE)) for n in walk(p))


def certificate_errors(c: Certificate, path: str = "root") -> list[str]:
    """Every violated rule condition; empty when the certificate checks."""
    errs: list[str] = []
    g = c.goal
    arity = RULES.get(c.rule)
    if arity is None:
        return [f"{path}: unknown rule {c.rule}"]
    if len(c.children) != arity:
        return [f"{path}: {c.rule} needs {arity} premises, has {len(c.children)}"]
    kids = [k.goal for k in c.children]
    try:
        if c.rule == "Self":
            if not same_program(g.left, g.right):
                errs.append(f"{path}: Self on different programs")
        elif c.rule == "Subset":
            k = kids[0]
            if not (same_program(k.left, g.left) and same_program(k.right, g.right)):
                errs.append(f"{path}: Subset premise is about other programs")
            if not k.h >= g.h:
                errs.append(f"{path}: Subset premise set {sorted(k.h)} does not include {sorted(g.h)}")
        elif c.rule == "Unmodified":
            k = kids[0]
            if not (same_program(k.left, g.left) and same_program(k.right, g.right)):
                errs.append(f"{path}: Unmodified premise is about other programs")
            if not k.h <= g.h:
                errs.append(f"{path}: Unmodified premise set is not a subset of the goal set")
            extra = g.h - k.h
            touched = (all_vars(g.left) | all_vars(g.right)) & extra
            if touched:
                errs.append(f"{path}: Unmodified adds {sorted(touched)} which the programs mention")
        elif c.rule == "SeqCompose":
            a, b = kids
            if a.h != g.h or b.h != g.h:
                errs.append(f"{path}: SeqCompose premises must use the goal set")
            if not same_program(g.left, Seq(a.left, b.left)) or not same_program(g.right, Seq(a.right, b.right)):
                errs.append(f"{path}: SeqCompose goal is not the sequence of its premises")
            need = fv(b.left) | fv(b.right)
            if not need <= g.h:
                errs.append(f"{path}: SeqCompose needs {sorted(need - g.h)} in H")
        elif c.rule == "LoopLift":
            k = kids[0]
            if not (isinstance(g.left, Loop) and isinstance(g.right, Loop)):
                errs.append(f"{path}: LoopLift goal is not a pair of loops")
            else:
                if k.h != g.h:
                    errs.append(f"{path}: LoopLift premise must use the goal set")
                if not (same_program(k.left, g.left.a) and same_program(k.right, g.right.a)):
                    errs.append(f"{path}: LoopLift premise is not the loop bodies")
                need = fv(k.left) | fv(k.right)
                if not need <= g.h:
                    errs.append(f"{path}: LoopLift needs {sorted(need - g.h)} in H")
        elif c.rule == "BaseOracle":
            if _loop_or_ode(g.left) or _loop_or_ode(g.right):
                errs.append(f"{path}: BaseOracle on a program with loops or differential equations")
            r = c.oracle_report
            if r is None:
                errs.append(f"{path}: BaseOracle without a report")
            elif not r.passed:
                errs.append(f"{path}: BaseOracle report is a failure")
            elif r.goal_digest != goal_digest(g):
                errs.append(f"{path}: BaseOracle report belongs to another goal")
    except Exception as e:  # malformed programs inside a hand-edited certificate
        errs.append(f"{path}: {type(e).__name__}: {e}")
    for i, k in enumerate(c.children):
        errs += certificate_errors(k, f"{path}.{i}")
    return errs


def check_certificate(c: Certificate) -> bool:
    return not certificate_errors(c)


# ---------------------------------------------------------------- bounded oracle


def _constants(p) -> set[float]:
    return {float(n.value) for n in walk(p) if isinstance(n, Constant)}


def _outcomes(p, env: dict, pool, counter: list):
    """Every end state, enumerating choices and drawing `x := *` from `pool(x)`."""
    if isinstance(p, Seq):
        for e1 in _outcomes(p.a, env, pool, counter):
            yield from _outcomes(p.b, e1, pool, counter)
    elif isinstance(p, Choice):
        yield from _outcomes(p.a, env, pool, counter)
        yield from _outcomes(p.b, env, pool, counter)
    elif isinstance(p, Test):
        try:
            ok = eval_formula(p.f, env)
        except NumericOverflow:
            counter[0] += 1
            return
        if ok:
            yield env
    elif isinstance(p, Assign):
        try:
            v = eval_term(p.term, env)
        except NumericOverflow:
            counter[0] += 1
            return
        yield {**env, p.var: v}
    elif isinstance(p, AssignAny):
        for v in pool(p.var):
            yield {**env, p.var: v}
    else:
        raise Unsupported(f"{type(p).__name__} is outside the oracle's fragment")


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * (1.0 + abs(a))


def _key(state: dict, h: list, tol: float) -> tuple:
    return tuple(state[x] for x in h)


def base_oracle(goal: EquivGoal, cfg: OracleConfig = OracleConfig()) -> OracleReport:
    """Bounded two-sided check of loop-free H-equivalence from shared sampled states."""
    if _loop_or_ode(goal.left) or _loop_or_ode(goal.right):
        raise Unsupported("the oracle handles loop-free, ODE-free programs only")
    digest = goal_digest(goal)
    names = sorted({x for x in all_vars(goal.left) | all_vars(goal.right) | goal.h if not x.endswith("'")})
    h = sorted(x for x in goal.h if not x.endswith("'"))
    consts = _constants(goal.left) | _constants(goal.right) | {0.0, 1.0, -1.0}
    counter = [0]
    total = 0

    for i in range(cfg.n_states):
        init = {}
        for n in names:
            lo, hi = cfg.bounds.get(n, cfg.default_bounds)
            init[n] = lo + uniform(cfg.seed, "oracle", i, n) * (hi - lo)
        samples = {}
        for n in names:
            lo, hi = cfg.bounds.get(n, cfg.default_bounds)
            samples[n] = [lo + uniform(cfg.seed, "value", i, n, k) * (hi - lo) for k in range(cfg.n_values)]
        base = sorted(consts | set(init.values()))

        def forall_pool(x, base=base, samples=samples):
            return base + samples.get(x, [])

        for direction, (src, dst) in (("left->right", (goal.left, goal.right)), ("right->left", (goal.right, goal.left))):
            ends = list(islice(_outcomes(src, init, forall_pool, counter), cfg.max_outcomes))
            total += len(ends)
            if not ends:
                continue
            targets = sorted({v for e in ends for v in e.values()} | set(base))

            def exists_pool(x, targets=targets, samples=samples):
                return targets + samples.get(x, [])

            others = list(islice(_outcomes(dst, init, exists_pool, counter), cfg.max_outcomes))
            total += len(others)
            for e in ends:
                if not any(all(_close(e[x], o[x], cfg.tol) for x in h) for o in others):
                    cex = {
                        "direction": direction,
                        "initial": dict(sorted(init.items())),
                        "end": {x: e[x] for x in h},
                    }
                    return OracleReport(False, digest, i + 1, total, counter[0], cfg.seed, cex)
    return OracleReport(True, digest, cfg.n_states, total, counter[0], cfg.seed, None)


# ---------------------------------------------------------------- search


def _cert(goal, rule, side=(), children=(), report=None) -> Certificate:
    return Certificate(goal, rule, tuple((d, frozenset(s)) for d, s in side), tuple(children), report)


def _prove_body(a_body, b_body, target: frozenset, strategy: StrategyConfig):
    """Attack-prefix factoring: body = A; C with A the shortest prefix holding every attacked site."""
    left, right = flatten_seq(a_body), flatten_seq(b_body)
    if len(left) != len(right):
        return Unproven("the two programs do not differ only in attacked assignments")
    diff = [i for i, (x, y) in enumerate(zip(left, right)) if x != y]
    if not diff:
        return Unproven("no attacked site found")
    attempts = []
    for k in range(max(diff) + 1, len(left) + 1):
        a, b = seq(*left[:k]), seq(*right[:k])
        if _loop_or_ode(a) or _loop_or_ode(b):
            break
        c = seq(*left[k:])
        fv_c = fv(c) if c is not None else set()
        h = frozenset(fv_c | fv(seq(a, c)) | fv(seq(b, c)) | target)
        h_a = h & frozenset(all_vars(a) | all_vars(b))
        ga = EquivGoal(a, b, h_a)
        report = base_oracle(ga, strategy.oracle)
        attempts.append((k, report.passed))
        if not report.passed:
            continue
        a_cert = _cert(ga, "BaseOracle", report=report)
        if h_a != h:
            a_cert = _cert(EquivGoal(a, b, h), "Unmodified", [("(V(A) | V(B)) & H'' is empty", h - h_a)], [a_cert])
        if c is None:
            return a_cert, h
        c_cert = _cert(EquivGoal(c, c, h), "Self", [("left equals right", ())])
        return _cert(
            EquivGoal(Seq(a, c), Seq(b, c), h),
            "SeqCompose",
            [("FV(C) | FV(D) <= H", fv_c), (f"attack prefix is the first {k} statements", ())],
            [a_cert, c_cert],
        ), h
    return Unproven("no prefix of the loop body passed the bounded oracle", tuple(attempts))


def prove_equiv(goal: EquivGoal, strategy: StrategyConfig = StrategyConfig()):
    """A certificate for `goal`, or Unproven."""
    if same_program(goal.left, goal.right):
        return _cert(goal, "Self", [("left equals right", ())])
    looped = isinstance(goal.left, Loop) and isinstance(goal.right, Loop)
    a_body, b_body = (goal.left.a, goal.right.a) if looped else (goal.left, goal.right)
    res = _prove_body(a_body, b_body, goal.h, strategy)
    if isinstance(res, Unproven):
        return res
    cert, h = res
    if looped:
        cert = _cert(
            EquivGoal(goal.left, goal.right, h), "LoopLift", [("FV(A) | FV(B) <= H", fv(a_body) | fv(b_body))], [cert]
        )
    if h != goal.h:
        cert = _cert(goal, "Subset", [("H <= H'", goal.h)], [cert])
    return cert


@dataclass(frozen=True)
class RobustSafetyVerdict:
    status: str  # RobustlySafe_Deductive | RobustlySafe_Empirical | Unproven
    certificate: Certificate | None
    h_used: frozenset
    detail: Unproven | None = None

    def to_json(self) -> dict:
        out = {
            "status": self.status,
            "h": sorted(self.h_used),
            "certificate": self.certificate.to_json() if self.certificate else None,
        }
        if self.detail is not None:
            out["unproven"] = self.detail.to_json()
            out["note"] = "Unproven is not a proof of unsafety"
        return out


def verdict_for(cert, h) -> RobustSafetyVerdict:
    if isinstance(cert, Unproven):
        return RobustSafetyVerdict("Unproven", None, frozenset(h), cert)
    status = "RobustlySafe_Deductive" if cert.deductive else "RobustlySafe_Empirical"
    return RobustSafetyVerdict(status, cert, frozenset(h))


def safety_goal(model, sensors) -> EquivGoal:
    """eq(P, attacked(P, S), FV(pre & post)) for a `pre -> [loop]post` model."""
    pre, loop, post = split_problem(expand(model.problem, model))
    h = frozenset(x for x in fv_formula(And(pre, post)) if not x.endswith("'"))
    attacked, _ = attack(loop, sensors)
    return EquivGoal(loop, attacked, h)


def check_robust_safety(model, sensors, strategy: StrategyConfig = StrategyConfig()) -> RobustSafetyVerdict:
    goal = safety_goal(model, sensors)
    return verdict_for(prove_equiv(goal, strategy), goal.h)


def state_goal(model, sensors, h) -> EquivGoal:
    _, loop, _ = split_problem(expand(model.problem, model))
    attacked, _ = attack(loop, sensors)
    return EquivGoal(loop, attacked, frozenset(h))
