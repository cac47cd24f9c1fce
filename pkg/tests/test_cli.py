import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from nlkg.cli import main, run

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"


def write(tmp_path, obj, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def read_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


def test_freq_example(tmp_path):
    code, doc = run("freq", SCEN / "freq_example.json", tmp_path)
    assert code == 0
    out = json.loads((tmp_path / "freq.json").read_text())
    assert [round(x, 12) for x in out["omega"]] == [round(math.sqrt(k), 12) for k in (2, 5, 10)]
    assert out["scenario_hash"] == doc["scenario_hash"] and out["seed"] == 0
    lines = (tmp_path / "freq.csv").read_bytes().split(b"\r\n")
    assert lines[0] == b"scenario_hash,seed,c,j,lambda,omega,omega_minus_c2"
    assert lines[1].startswith(doc["scenario_hash"].encode())


def test_json_keys_sorted(tmp_path):
    run("freq", SCEN / "freq_example.json", tmp_path)
    text = (tmp_path / "freq.json").read_text(encoding="utf-8")
    obj = json.loads(text)
    assert text == json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def test_malformed_scenario_exit_2(tmp_path, capsys):
    p = write(tmp_path, {"J": 3, "potential": {"vprime": [0, 0, 0]}, "integrator": {"method": "rk4"}})
    assert main(["simulate", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "integrator.method" in err
    assert not (tmp_path / "o").exists()


def test_bad_threads_exit_2(tmp_path, monkeypatch):
    monkeypatch.setenv("NLKG_THREADS", "zero")
    assert main(["freq", "--scenario", str(SCEN / "freq_example.json"), "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_3(tmp_path):
    p = write(tmp_path, {"J": 8, "potential": {"vprime_seed": 0}, "nonlinearity": {"4": -1e6}, "s": 1.0,
                         "R": 0.9, "integrator": {"method": "strang", "dt": 0.5}, "simulate": {"T": 200.0}})
    assert run("simulate", p, tmp_path / "o")[0] == 3


def test_certification_failure_is_data(tmp_path):
    # omega_1 = 1.5 at c = 1 makes 2 omega_1 an integer
    p = write(tmp_path, {"J": 3, "potential": {"vprime": [0.5, 0, 0]}, "r": 1, "gamma": 1e-3, "tau": 1.0,
                         "N": 1, "certify": {"r": 2}})
    code, doc = run("certify", p, tmp_path / "o")
    assert code == 0 and doc["passed"] is False
    out = json.loads((tmp_path / "o" / "certify.json").read_text())
    assert out["passed"] is False and out["results"][0]["families"]["order0"]["min_divisor"] == 0.0


SMALL = {
    "seed": 4,
    "J": 6,
    "potential": {"vprime_seed": 1},
    "c_list": [1.0, 2.0],
    "nonlinearity": {"4": 1.0},
    "r": 1, "gamma": 1e-3, "tau": 2.0, "s": 2.0, "R": 0.1, "N": 3,
    "R_list": [0.2, 0.1, 0.05],
    "integrator": {"method": "strang", "dt0": 0.02, "kappa": 0.05, "record_every": 5},
    "measure": {"family": "all", "r": 1, "N": 2, "samples": 100, "gammas": [0.1, 1.0, 3.0]},
    "normalform": {"tail_extra": 0, "remainder_samples": 8},
    "simulate": {"T": 2.0},
    "scaling": {"Kprime": 0.05, "horizon_cap": 2.0},
    "corollary": {"alpha": 1.0, "K": 0.1, "horizon_cap": 2.0},
}


@pytest.mark.parametrize("cmd", ["freq", "certify", "measure", "normalform", "simulate", "scaling", "corollary"])
def test_rerun_byte_identical_across_threads(cmd, tmp_path, monkeypatch):
    p = write(tmp_path, SMALL)
    outs = []
    for threads in ("1", "2", "1"):
        monkeypatch.setenv("NLKG_THREADS", threads)
        d = tmp_path / f"out{len(outs)}"
        assert run(cmd, p, d)[0] == 0
        outs.append(read_bytes(d))
    assert outs[0] == outs[1] == outs[2]
    h = json.loads(next(v for k, v in outs[0].items() if k.endswith(".json")))["scenario_hash"]
    for name, blob in outs[0].items():
        assert h.encode() in blob, name


def test_console_script(tmp_path):
    exe = shutil.which("nlkg")
    cmd = [exe] if exe else [sys.executable, "-m", "nlkg.cli"]
    res = subprocess.run(cmd + ["freq", "--scenario", str(SCEN / "freq_example.json"), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["command"] == "freq"
    res = subprocess.run(cmd + ["bogus", "--scenario", "x"], capture_output=True, text=True)
    assert res.returncode == 2


def test_shipped_scenarios_validate():
    from nlkg.config import load_scenario

    for p in sorted(SCEN.glob("*.json")):
        load_scenario(p)
