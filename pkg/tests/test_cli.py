"""Command-line interface: outputs and exit codes."""

import csv

import pytest

from emtinit.cli import run_cli


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def balanced_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    rc = run_cli(["init", "wscc9_unbalanced", "--k", "0", "--out", str(out)])
    return rc, out


def test_init_writes_outputs(balanced_run, capsys):
    rc, out = balanced_run
    assert rc == 0
    conv = rows(out / "convergence.csv")
    assert conv[0] == ["iter", "residual_2norm", "cumulative_F_evals", "krylov_iters"]
    assert float(conv[-1][1]) < 1e-6
    sol = rows(out / "solution.csv")
    assert sol[0] == ["name", "value"] and len(sol) == 113
    assert rows(out / "powerflow.csv")[0] == ["bus", "Vmag", "Vang"]


def test_simulate_and_report(balanced_run, capsys):
    _, out = balanced_run
    rc = run_cli(["simulate", "wscc9_unbalanced", "--k", "0", "--solution",
                  str(out / "solution.csv"), "--periods", "2", "--out", str(out)])
    assert rc == 0
    head = rows(out / "waveforms.csv")[0]
    assert head == ["t", "bus5.v.a", "G2.omega", "M5.theta_r"]
    assert rows(out / "terminals.csv")[0][1] == "G1.v.a"
    assert run_cli(["report", str(out)]) == 0
    drift = {r[0]: float(r[1]) for r in rows(out / "drift.csv")[1:]}
    assert drift["G2.omega"] < 1e-4
    assert "G2.omega" in capsys.readouterr().out


def test_nonconvergence_exit_code(tmp_path):
    assert run_cli(["init", "wscc9_unbalanced", "--maxiter", "0", "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("argv", [
    ["init", "no_such_system"],
    ["init", "wscc9_unbalanced", "--k", "1.5"],
    ["init", "wscc9_unbalanced", "--reltol", "2"],
    ["init", "wscc9_unbalanced", "--step-frac", "3"],
    ["simulate", "wscc9_unbalanced", "--solution", "/nonexistent.csv"],
    ["report", "/nonexistent"],
    ["bogus"],
])
def test_input_errors_exit_2(argv, tmp_path, capsys):
    assert run_cli(argv + (["--out", str(tmp_path)] if argv[0] in ("init", "simulate") else [])
                   ) == 2


def test_bad_system_file(tmp_path):
    path = tmp_path / "bad.net"
    path.write_text("[BUS]\n1 abc\n")
    assert run_cli(["init", str(path), "--out", str(tmp_path)]) == 2
