import json
import subprocess
import sys

import numpy as np
import pytest

from tentspde import cli, criteria
from tentspde.grid import GridSpec, SpaceTimeField, save_field

SMALL = ["--samples", "2"]


def write_config(tmp_path, body: str):
    p = tmp_path / "c.toml"
    p.write_text(body)
    return str(p)


@pytest.fixture
def small_config(tmp_path):
    return write_config(tmp_path, f'[run]\nseed = 1\nout = "{tmp_path / "out"}"\n[grid]\nN = 32\nM = 32\n')


@pytest.mark.parametrize("command", ["norm", "heat", "lions", "quad", "czdecomp", "spde"])
def test_operation_commands(command, small_config, tmp_path, capsys):
    assert cli.main([command, "--config", small_config, *SMALL]) == 0
    printed = json.loads(capsys.readouterr().out)
    written = json.loads((tmp_path / "out" / f"{command}.json").read_text())
    assert printed == written


def test_norm_of_input_file(tmp_path, capsys):
    g = GridSpec(1, 16, 16)
    path = tmp_path / "f.bin"
    save_field(path, SpaceTimeField(g, np.ones((16, 16))))
    assert cli.main(["norm", "--input", str(path), "--kind", "vertical", "--p", "2"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["value"] == pytest.approx(np.sqrt(g.T_max))


def test_czdecomp_checks_pass(small_config, capsys):
    assert cli.main(["czdecomp", "--config", small_config, "--p", "1.5"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert all(c["passed"] for c in rec["checks"].values())


def test_verify_pass(tmp_path, capsys):
    out = tmp_path / "v"
    assert cli.main(["verify", "--quick", "--criteria", "1,4", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("[PASS] C01") and lines[1].startswith("[PASS] C04")
    assert json.loads((out / "report.json").read_text())["passed"]


def test_verify_failure_exit_code(tmp_path, monkeypatch, capsys):
    real = criteria.run_criterion

    def failing(cid, ctx):
        r = real(cid, ctx)
        return criteria.CriterionResult(r.id, r.name, r.anchor, r.value, r.threshold, False)

    monkeypatch.setattr(criteria, "run_criterion", failing)
    assert cli.main(["verify", "--quick", "--criteria", "1", "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().out.startswith("[FAIL] C01")


@pytest.mark.parametrize("argv", [
    ["verify", "--criteria", "99"],
    ["verify", "--criteria", "one"],
    ["heat", "--workers", "0"],
])
def test_config_errors(argv, capsys):
    assert cli.main(argv) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    path = write_config(tmp_path, "[run]\nseed = 0\nbogus = 1\n")
    assert cli.main(["heat", "--config", path]) == 2
    assert "run.bogus: unknown key" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    assert cli.main(["norm", "--input", str(tmp_path / "missing.bin")]) == 3
    assert capsys.readouterr().err.startswith("error:")


def test_sweep_command(tmp_path, capsys):
    path = write_config(tmp_path, f'[run]\nseed = 0\nout = "{tmp_path}"\n[grid]\nN = 16\nM = 16\n'
                                  '[sweep]\naxis = "K"\nvalues = [1, 2]\n')
    assert cli.main(["sweep", "--config", path, *SMALL]) == 0
    header = capsys.readouterr().out.splitlines()[0]
    assert header.startswith("K,lions_tp,lions_tp_se")
    assert (tmp_path / "sweep_K.csv").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tentspde.cli", "verify", "--quick", "--criteria", "1",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "[PASS] C01" in proc.stdout
