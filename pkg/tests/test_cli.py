from __future__ import annotations

import json
import os
from pathlib import Path

import pytest
from click.testing import CliRunner

from hpsec.cli import main

from conftest import CORPUS

GOLDENS = Path(__file__).parent / "goldens"
UPDATE = os.environ.get("HPSEC_UPDATE_GOLDENS") == "1"


def cli(*args, env=None):
    runner = CliRunner()
    return runner.invoke(main, list(args), obj={"argv": list(args)}, env=env, catch_exceptions=False)


@pytest.fixture(autouse=True)
def in_corpus(monkeypatch):
    monkeypatch.chdir(str(CORPUS))


GOLDEN_CASES = {
    "analyze_vehicle": (["analyze", "vehicle.hp"], 0),
    "attack_sensing": (["attack", "--json", "--sensors", "v_s", "vehicle_sensing.hp"], 0),
    "compose_temp": (["compose", "--json", "--sensors", "temp_s", "--eqset", "v_p,d_p", "vehicle_temp.hp"], 0),
    "totality_partial_test": (["totality", "--sensors", "a", "partial_test.hp"], 1),
    "totality_partial_domain": (["totality", "--sensors", "a", "partial_domain.hp"], 1),
    "robust_abs_w_s1": (["robust-safety", "--sensors", "w_s1", "abs_voting.hp"], 0),
    "robust_mcas_s_L": (["robust-safety", "--sensors", "s_L", "mcas.hp"], 1),
}


@pytest.mark.parametrize("name", sorted(GOLDEN_CASES))
def test_golden(name):
    args, status = GOLDEN_CASES[name]
    r = cli(*args)
    assert r.exit_code == status, r.output
    path = GOLDENS / f"{name}.json"
    if UPDATE:
        path.write_text(r.stdout)
    assert r.stdout == path.read_text()
    data = json.loads(r.stdout)
    assert json.dumps(data, sort_keys=True, indent=2) + "\n" == r.stdout


def test_attack_prints_model():
    r = cli("attack", "--sensors", "v_s", "vehicle_sensing.hp")
    assert r.exit_code == 0
    assert "HP ctrl ::= v_s := *; d_s := d_p;" in r.stdout


def test_usage_errors():
    assert cli("compose", "--sensors", "temp_s", "vehicle_temp.hp").exit_code == 2
    assert cli("attack", "--sensors", "nope", "vehicle_sensing.hp").exit_code == 2
    assert cli("attack", "--sensors", "v_p", "vehicle_sensing.hp").exit_code == 2
    assert cli("robust-state", "--sensors", "temp_s", "--h", "temp_s", "vehicle_temp.hp").exit_code == 2


def test_parse_error_exit(tmp_path):
    bad = tmp_path / "bad.hp"
    bad.write_text("Problem. [x := ;]true End.")
    r = cli("parse", str(bad))
    assert r.exit_code == 2 and "bad.hp:1:" in r.stderr


def test_compose_writes_outputs(tmp_path):
    prefix = str(tmp_path / "temp.composed")
    r = cli("compose", "--sensors", "temp_s", "--eqset", "v_p,d_p", "--out", prefix, "vehicle_temp.hp")
    assert r.exit_code == 0
    for ext in ("hp", "kyx", "json"):
        assert Path(f"{prefix}.{ext}").exists()
    assert "eq_E -> [{ctrlC;plantC}*]eq_E" in Path(f"{prefix}.kyx").read_text()


def test_totality_gate_blocks_compose():
    r = cli("compose", "--sensors", "a", "--eqset", "x", "partial_test.hp")
    assert r.exit_code == 1 and json.loads(r.stdout)["status"] == "TotalityFailed"


def test_robust_state_temperature(tmp_path):
    kyx = tmp_path / "ob.kyx"
    r = cli("robust-state", "--sensors", "temp_s", "--h", "v_p", "--runs", "20", "--iters", "10",
            "--kyx", str(kyx), "vehicle_temp.hp")
    assert r.exit_code == 0, r.output
    data = json.loads(r.stdout)
    assert data["compose"]["status"] == "Consistent"
    assert kyx.read_text().startswith("ArchiveEntry")


def test_robust_state_bus():
    r = cli("robust-state", "--mode", "compose", "--sensors", "temp_s", "--h", "v_p,d_p,a",
            "--runs", "20", "--iters", "10", "bus.hp")
    assert r.exit_code == 0, r.output
    assert json.loads(r.stdout)["compose"]["simulation"]["eq_violations"] == []


def test_falsify_exit_status():
    bounds = ["--bounds", "d_p=20:200", "--bounds", "eps=0.05:0.5", "--bounds", "A=1:5", "--bounds", "B=1:5"]
    r = cli("falsify", "--sensors", "v_s", "--h", "d_p", *bounds, "vehicle_sensing.hp")
    assert r.exit_code == 1 and json.loads(r.stdout)["candidate"] is not None


def test_check_cert_roundtrip(tmp_path):
    cert = tmp_path / "c.json"
    assert cli("robust-safety", "--sensors", "s_R", "--cert-out", str(cert), "mcas_fixed.hp").exit_code == 0
    r = cli("check-cert", str(cert))
    assert r.exit_code == 0 and json.loads(r.stdout)["valid"]
    data = json.loads(cert.read_text())
    data["children"][0]["goal"]["h"] = data["children"][0]["goal"]["h"][1:]
    cert.write_text(json.dumps(data))
    assert cli("check-cert", str(cert)).exit_code == 1


def test_seed_from_environment():
    a = cli("simulate", "--iters", "3", "vehicle.hp", env={"HPSEC_SEED": "5"})
    b = cli("--seed", "5", "simulate", "--iters", "3", "vehicle.hp")
    c = cli("--seed", "6", "simulate", "--iters", "3", "vehicle.hp")
    assert a.stdout == b.stdout != c.stdout


def test_simulate_csv(tmp_path):
    out = tmp_path / "trace.csv"
    r = cli("simulate", "--iters", "2", "--csv", str(out), "vehicle.hp")
    assert r.exit_code == 0
    header = out.read_text().splitlines()[0].split(",")
    assert header[0] == "time" and header[1:] == sorted(header[1:])


def test_emit():
    r = cli("emit", "vehicle.hp")
    assert r.exit_code == 0 and r.stdout.startswith('ArchiveEntry "vehicle"')
    assert cli("emit", "--no-exp", "abs.hp").exit_code == 2


def test_manifest_replay(tmp_path):
    m = tmp_path / "m.json"
    args = ["check-comp", "--sensors", "temp_s", "--eqset", "v_p,d_p", "--runs", "5", "--iters", "5", "vehicle_temp.hp"]
    first = cli("--seed", "11", "--manifest", str(m), *args)
    data = json.loads(m.read_text())
    assert data["seed"] == 11 and data["argv"] == args
    assert set(data["inputs"]) == {"vehicle_temp.hp"}
    r = cli("replay", str(m))
    assert r.exit_code == 0 and json.loads(r.stdout)["identical"]
    data["seed"] = 12
    m.write_text(json.dumps(data))
    edited = cli("replay", str(m))
    assert json.loads(edited.stdout).keys() == json.loads(r.stdout).keys()
    assert first.exit_code == 0
