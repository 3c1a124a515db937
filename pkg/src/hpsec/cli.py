"""`hpsec` command-line entry point."""

from __future__ import annotations

import contextlib
import hashlib
import io
import json
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import click

from .ast import expand
from .attack import NotASensor, SensorInPlant, attack_model
from .kyx import UnsupportedConstruct, emit_kyx
from .robust import (
    Certificate, OracleConfig, StrategyConfig, certificate_errors, check_robust_safety, prove_equiv,
    state_goal, verdict_for,
)
from .sim import NondetPolicy, NumericOverflow, UnboundedAssign, check_composition, falsify_equiv, run, sample_state, program_names, trace_to_csv
from .syntax import ParseError, load_model, print_model
from .total import check_totality
from .transform import (
    EqSetNotBound, EqSetOverlapsSensors, ShapeError, canonicalize, compose, split_problem, totality_gate,
)
from .vars import analyze

USAGE_ERRORS = (
    ParseError, ShapeError, NotASensor, SensorInPlant, EqSetNotBound, EqSetOverlapsSensors,
    UnsupportedConstruct, UnboundedAssign, FileNotFoundError,
)


def _version() -> str:
    try:
        return version("hpsec")
    except PackageNotFoundError:
        return "0.0.0"


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _names(text: str | None) -> list[str]:
    if not text:
        return []
    return [x for x in (s.strip() for s in text.split(",")) if x]


def _bounds(items) -> dict:
    out = {}
    for item in items:
        try:
            name, rng = item.split("=", 1)
            lo, hi = rng.split(":", 1)
            out[name.strip()] = (float(lo), float(hi))
        except ValueError:
            raise click.BadParameter(f"expected name=lo:hi, got {item!r}", param_hint="--bounds")
    return out


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Out:
    """Collects stdout text and the exit status so a manifest can digest the report."""

    def __init__(self) -> None:
        self.parts: list[str] = []

    def echo(self, text: str) -> None:
        self.parts.append(text + "\n")
        click.echo(text)

    @property
    def text(self) -> str:
        return "".join(self.parts)


def _finish(ctx: click.Context, status: int, inputs=()) -> None:
    root = ctx.find_root()
    manifest = root.params.get("manifest")
    if manifest:
        argv = _subcommand_argv(root.obj["argv"])
        data = {
            "tool": "hpsec",
            "version": _version(),
            "seed": root.params["seed"],
            "argv": argv,
            "inputs": {p: _digest(p) for p in inputs},
            "report_digest": hashlib.sha256(root.obj["out"].text.encode()).hexdigest(),
            "exit_status": status,
        }
        Path(manifest).write_text(_dump(data) + "\n")
    ctx.exit(status)


def _subcommand_argv(argv) -> list[str]:
    """Drop the group options; seeds and manifest paths are recorded separately."""
    rest = list(argv)
    i = 0
    while i < len(rest) and rest[i].startswith(("--seed", "--manifest")):
        i += 1 if "=" in rest[i] else 2
    return rest[i:]


def _fail_usage(e: Exception) -> None:
    click.echo(f"error: {type(e).__name__}: {e}", err=True)
    sys.exit(2)


@click.group()
@click.option("--seed", type=int, default=0, envvar="HPSEC_SEED", show_default=True, help="Seed for every sampler.")
@click.option("--manifest", type=click.Path(dir_okay=False), default=None, help="Write a replay manifest here.")
@click.pass_context
def main(ctx: click.Context, seed: int, manifest: str | None) -> None:
    """Sensor-attack robustness analysis for hybrid programs."""
    ctx.ensure_object(dict)
    ctx.obj.setdefault("argv", [])
    ctx.obj["out"] = _Out()


def _model(path: str):
    try:
        return load_model(path)
    except ParseError as e:
        for d in getattr(e, "diagnostics", []) or []:
            click.echo(str(d), err=True)
        if not getattr(e, "diagnostics", None):
            click.echo(str(e), err=True)
        sys.exit(2)
    except OSError as e:
        _fail_usage(e)


sensors_opt = click.option("--sensors", required=True, help="Comma-separated compromised sensor variables.")
model_arg = click.argument("model", type=click.Path(exists=True, dir_okay=False))


def _policy(seed, bounds, dt, default_bounds=(0.0, 10.0)) -> NondetPolicy:
    return NondetPolicy(seed=seed, bounds=_bounds(bounds), dt=dt, default_bounds=default_bounds)


def sim_options(f):
    f = click.option("--tol", type=float, default=1e-6, show_default=True, help="Relative tolerance.")(f)
    f = click.option("--bounds", multiple=True, help="Sampling range name=lo:hi (repeatable).")(f)
    f = click.option("--dt", type=float, default=None, help="Fixed integration step.")(f)
    f = click.option("--iters", type=int, default=20, show_default=True, help="Loop iterations per run.")(f)
    return f


@main.command()
@click.option("--json", "as_json", is_flag=True, help="Print a summary instead of the model text.")
@model_arg
@click.pass_context
def parse(ctx, as_json, model):
    """Parse a model and print it back in canonical layout."""
    m = _model(model)
    out = ctx.obj["out"]
    if as_json:
        out.echo(_dump({
            "definitions": [[d.name, d.sort] for d in m.definitions],
            "variables": [[n, s] for n, s in m.variables],
        }))
    else:
        out.echo(print_model(m).rstrip("\n"))
    _finish(ctx, 0, [model])


@main.command()
@click.option("--definition", default=None, help="Analyze one abbreviation instead of the problem.")
@model_arg
@click.pass_context
def analyze_cmd(ctx, definition, model):
    """Free, bound and must-bound variables."""
    m = _model(model)
    if definition:
        target = next((d for d in m.definitions if d.name == definition and d.body is not None), None)
        if target is None:
            _fail_usage(KeyError(f"no definition named {definition}"))
        node = expand(target.body, m)
    else:
        node = expand(m.problem, m)
    ctx.obj["out"].echo(_dump(analyze(node).to_json()))
    _finish(ctx, 0, [model])


main.add_command(analyze_cmd, "analyze")


@main.command("attack")
@sensors_opt
@click.option("--json", "as_json", is_flag=True, help="Print the replaced sites instead of the model.")
@model_arg
@click.pass_context
def attack_cmd(ctx, sensors, as_json, model):
    """Replace every assignment to a sensor by `x := *`."""
    m = _model(model)
    try:
        attacked, spec = attack_model(m, _names(sensors))
    except USAGE_ERRORS as e:
        _fail_usage(e)
    ctx.obj["out"].echo(_dump(spec.to_json()) if as_json else print_model(attacked).rstrip("\n"))
    _finish(ctx, 0, [model])


@main.command("canonicalize")
@click.option("--low", default="", help="Low-integrity `x := *` variables left in place.")
@model_arg
@click.pass_context
def canonicalize_cmd(ctx, low, model):
    """Hoist high-integrity nondeterminism into choice variables."""
    m = _model(model)
    try:
        canon = canonicalize(m, frozenset(_names(low)))
    except USAGE_ERRORS as e:
        _fail_usage(e)
    ctx.obj["out"].echo(print_model(canon.to_model()).rstrip("\n"))
    _finish(ctx, 0, [model])


def _compose(m, sensors, eqset, low, suffix, gate):
    canon = canonicalize(m, frozenset(_names(low)))
    passed, report = totality_gate(canon, sensors, trusted=eqset)
    if gate and not passed:
        return canon, None, report
    return canon, compose(canon, sensors, eqset, suffix=suffix), report


def _write_outputs(prefix: str, comp) -> dict:
    p = Path(prefix)
    files = {
        "hp": f"{prefix}.hp",
        "kyx": f"{prefix}.kyx",
        "manifest": f"{prefix}.json",
    }
    Path(files["hp"]).write_text(print_model(comp.composed))
    Path(files["kyx"]).write_text(emit_kyx(comp.composed, name=p.name))
    Path(files["manifest"]).write_text(_dump(comp.manifest()) + "\n")
    return files


@main.command("compose")
@sensors_opt
@click.option("--eqset", required=True, help="Comma-separated coupling set E.")
@click.option("--low", default="", help="Low-integrity `x := *` variables.")
@click.option("--suffix", default="_1", show_default=True, help="Suffix for renamed variables.")
@click.option("--out", "out_prefix", default=None, help="Write PREFIX.hp, PREFIX.kyx and PREFIX.json.")
@click.option("--no-gate", is_flag=True, help="Compose even when the totality check fails.")
@click.option("--json", "as_json", is_flag=True, help="Print the manifest instead of the model.")
@model_arg
@click.pass_context
def compose_cmd(ctx, sensors, eqset, low, suffix, out_prefix, no_gate, as_json, model):
    """Interleaved self-composition with the attacked copy."""
    m = _model(model)
    out = ctx.obj["out"]
    try:
        canon, comp, report = _compose(m, _names(sensors), _names(eqset), low, suffix, not no_gate)
    except USAGE_ERRORS as e:
        _fail_usage(e)
    if comp is None:
        for v in report.violations:
            click.echo(v.render(), err=True)
        out.echo(_dump({"status": "TotalityFailed", "totality": report.to_json()}))
        _finish(ctx, 1, [model])
    if out_prefix:
        files = _write_outputs(out_prefix, comp)
        out.echo(_dump({**comp.manifest(), "files": files}))
    elif as_json:
        out.echo(_dump(comp.manifest()))
    else:
        out.echo(print_model(comp.composed).rstrip("\n"))
    _finish(ctx, 0, [model])


@main.command("totality")
@sensors_opt
@click.option("--trusted", default="", help="Variables asserted equal across runs (usually E).")
@model_arg
@click.pass_context
def totality_cmd(ctx, sensors, trusted, model):
    """Check that the program stays total under arbitrary sensor values."""
    m = _model(model)
    try:
        _, loop, _ = split_problem(expand(m.problem, m))
        report = check_totality(loop, frozenset(_names(sensors)), _names(trusted))
    except USAGE_ERRORS as e:
        _fail_usage(e)
    for v in report.violations:
        click.echo(v.render(), err=True)
    ctx.obj["out"].echo(_dump(report.to_json()))
    _finish(ctx, 0 if report.status == "Total" else 1, [model])


def _oracle(seed, bounds) -> StrategyConfig:
    return StrategyConfig(oracle=OracleConfig(seed=seed, bounds=_bounds(bounds)))


@main.command("robust-safety")
@sensors_opt
@click.option("--bounds", multiple=True, help="Oracle sampling range name=lo:hi.")
@click.option("--cert-out", type=click.Path(dir_okay=False), default=None, help="Write the certificate as JSON.")
@model_arg
@click.pass_context
def robust_safety_cmd(ctx, sensors, bounds, cert_out, model):
    """Decide robust safety through an H-equivalence derivation."""
    m = _model(model)
    try:
        verdict = check_robust_safety(m, frozenset(_names(sensors)), _oracle(ctx.find_root().params["seed"], bounds))
    except USAGE_ERRORS as e:
        _fail_usage(e)
    if cert_out and verdict.certificate:
        Path(cert_out).write_text(_dump(verdict.certificate.to_json()) + "\n")
    click.echo(f"{verdict.status}: H = {{{', '.join(sorted(verdict.h_used))}}}", err=True)
    ctx.obj["out"].echo(_dump(verdict.to_json()))
    _finish(ctx, 0 if verdict.certificate else 1, [model])


@main.command("robust-state")
@sensors_opt
@click.option("--h", "h_set", required=True, help="Comma-separated high-integrity set H.")
@click.option("--mode", type=click.Choice(["decompose", "compose", "both"]), default="both", show_default=True)
@click.option("--eqset", default=None, help="Coupling set E (default: H plus untainted plant variables).")
@click.option("--low", default="", help="Low-integrity `x := *` variables.")
@click.option("--kyx", "kyx_out", type=click.Path(dir_okay=False), default=None, help="Write the proof obligation here.")
@click.option("--runs", type=int, default=100, show_default=True)
@sim_options
@model_arg
@click.pass_context
def robust_state_cmd(ctx, sensors, h_set, mode, eqset, low, kyx_out, runs, iters, dt, bounds, tol, model):
    """Check that H is unaffected by the sensor attack."""
    from .transform import default_eq_set

    m = _model(model)
    seed = ctx.find_root().params["seed"]
    s = frozenset(_names(sensors))
    h = _names(h_set)
    if s & set(h):
        _fail_usage(ValueError(f"H shares {sorted(s & set(h))} with the sensors"))
    report: dict = {"sensors": sorted(s), "h": sorted(h)}
    # Unproven is not evidence of a problem, so one successful method is enough
    established, refuted = False, False
    try:
        if mode in ("decompose", "both"):
            cert = prove_equiv(state_goal(m, s, h), _oracle(seed, bounds))
            verdict = verdict_for(cert, h)
            report["decompose"] = verdict.to_json()
            established = verdict.certificate is not None
        if mode in ("compose", "both"):
            canon = canonicalize(m, frozenset(_names(low)))
            e = _names(eqset) if eqset else default_eq_set(canon, s, h)
            passed, total = totality_gate(canon, s, trusted=e)
            sec: dict = {"eq_set": e, "totality": total.to_json()}
            if not passed:
                for v in total.violations:
                    click.echo(v.render(), err=True)
                sec["status"] = "TotalityFailed"
            else:
                comp = compose(canon, s, e)
                kyx = emit_kyx(comp.composed, name=Path(model).stem + "_composed")
                if kyx_out:
                    Path(kyx_out).write_text(kyx)
                sec["obligation_digest"] = hashlib.sha256(kyx.encode()).hexdigest()
                sim = check_composition(comp, _policy(seed, bounds, dt), runs, iters, tol)
                sec["simulation"] = sim.to_json()
                sec["status"] = "Consistent" if not sim.eq_violations else "Violated"
                established = established or not sim.eq_violations
                refuted = bool(sim.eq_violations)
            report["compose"] = sec
    except USAGE_ERRORS as err:
        _fail_usage(err)
    except NumericOverflow as err:
        _fail_usage(err)
    ctx.obj["out"].echo(_dump(report))
    _finish(ctx, 0 if established and not refuted else 1, [model])


@main.command("simulate")
@click.option("--sensors", default="", help="Attack these sensors before simulating.")
@click.option("--csv", "csv_out", type=click.Path(dir_okay=False), default=None, help="Write the trace as CSV.")
@sim_options
@model_arg
@click.pass_context
def simulate_cmd(ctx, sensors, csv_out, iters, dt, bounds, tol, model):
    """Run the model loop once from a sampled initial state."""
    m = _model(model)
    seed = ctx.find_root().params["seed"]
    try:
        if _names(sensors):
            m, _ = attack_model(m, _names(sensors))
        _, loop, _ = split_problem(expand(m.problem, m))
        policy = _policy(seed, bounds, dt)
        init = sample_state(program_names(loop), policy)
        trace = run(loop, init, policy, iters, record=bool(csv_out))
    except (*USAGE_ERRORS, NumericOverflow) as e:
        _fail_usage(e)
    if csv_out:
        Path(csv_out).write_text(trace_to_csv(trace))
    ctx.obj["out"].echo(_dump({
        "iterations": len(trace.boundaries) - 1,
        "failed": trace.failed,
        "terminated": trace.terminated,
        "truncated": trace.truncated,
        "initial": dict(sorted(init.items())),
        "final": dict(sorted(trace.final.valuation.items())),
    }))
    _finish(ctx, 0, [model])


@main.command("check-comp")
@sensors_opt
@click.option("--eqset", required=True, help="Coupling set E.")
@click.option("--low", default="", help="Low-integrity `x := *` variables.")
@click.option("--runs", type=int, default=100, show_default=True)
@sim_options
@model_arg
@click.pass_context
def check_comp_cmd(ctx, sensors, eqset, low, runs, iters, dt, bounds, tol, model):
    """Co-simulate the composition and look for broken equalities."""
    m = _model(model)
    seed = ctx.find_root().params["seed"]
    try:
        canon = canonicalize(m, frozenset(_names(low)))
        comp = compose(canon, _names(sensors), _names(eqset))
        report = check_composition(comp, _policy(seed, bounds, dt), runs, iters, tol)
    except (*USAGE_ERRORS, NumericOverflow) as e:
        _fail_usage(e)
    ctx.obj["out"].echo(_dump(report.to_json()))
    _finish(ctx, 1 if report.eq_violations else 0, [model])


@main.command("falsify")
@sensors_opt
@click.option("--h", "h_set", required=True, help="High-integrity set H.")
@click.option("--budget", type=int, default=1000, show_default=True)
@sim_options
@model_arg
@click.pass_context
def falsify_cmd(ctx, sensors, h_set, budget, iters, dt, bounds, tol, model):
    """Search for runs where the attack changes H."""
    m = _model(model)
    seed = ctx.find_root().params["seed"]
    try:
        goal = state_goal(m, frozenset(_names(sensors)), _names(h_set))
        cex = falsify_equiv(goal, frozenset(_names(sensors)), _policy(seed, bounds, dt), budget, iters, tol)
    except (*USAGE_ERRORS, NumericOverflow) as e:
        _fail_usage(e)
    ctx.obj["out"].echo(_dump({"candidate": cex.to_json() if cex else None}))
    _finish(ctx, 1 if cex else 0, [model])


@main.command("emit")
@click.option("--name", default=None, help="Archive entry name (default: file stem).")
@click.option("--no-exp", is_flag=True, help="Reject exp() instead of passing it through.")
@model_arg
@click.pass_context
def emit_cmd(ctx, name, no_exp, model):
    """Emit a KeYmaera X archive entry."""
    m = _model(model)
    try:
        text = emit_kyx(m, name=name or Path(model).stem, allow_exp=not no_exp)
    except USAGE_ERRORS as e:
        _fail_usage(e)
    ctx.obj["out"].echo(text.rstrip("\n"))
    _finish(ctx, 0, [model])


@main.command("check-cert")
@click.argument("cert", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def check_cert_cmd(ctx, cert):
    """Replay a certificate against the rule side conditions."""
    try:
        c = Certificate.from_json(json.loads(Path(cert).read_text()))
    except (ValueError, KeyError, TypeError, ParseError) as e:
        _fail_usage(e)
    errs = certificate_errors(c)
    for e in errs:
        click.echo(e, err=True)
    ctx.obj["out"].echo(_dump({"valid": not errs, "deductive": c.deductive, "rules": c.rules(), "errors": errs}))
    _finish(ctx, 0 if not errs else 1, [cert])


@main.command("replay")
@click.argument("manifest_file", type=click.Path(exists=True, dir_okay=False))
def replay_cmd(manifest_file):
    """Re-run a manifest and compare the report digest."""
    data = json.loads(Path(manifest_file).read_text())
    for path, digest in data.get("inputs", {}).items():
        if not Path(path).exists() or _digest(path) != digest:
            click.echo(f"error: input {path} changed since the manifest was written", err=True)
            sys.exit(2)
    buf = io.StringIO()
    argv = ["--seed", str(data["seed"]), *data["argv"]]
    with contextlib.redirect_stdout(buf):
        status = invoke(argv)
    got = hashlib.sha256(buf.getvalue().encode()).hexdigest()
    same = got == data["report_digest"] and status == data["exit_status"]
    click.echo(_dump({"identical": same, "report_digest": got, "exit_status": status}))
    sys.exit(0 if same else 1)


def invoke(argv: list[str]) -> int:
    """Run the CLI in-process and return its exit status."""
    obj = {"argv": list(argv)}
    try:
        rv = main.main(args=argv, obj=obj, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    return rv if isinstance(rv, int) else 0


def entry() -> None:
    sys.exit(invoke(sys.argv[1:]))
