import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from instances import one_dim_fixture, opposing_pair, random_instance
from resilia import AffineConstraint, AffineMap, Objective, ProblemSpec, build_scenario_set, \
    save_problem
from resilia.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, main


@pytest.fixture
def fixture_file(tmp_path):
    path = tmp_path / "line.json"
    save_problem(one_dim_fixture(), path)
    return path


def _read_duals(out):
    with open(out / "duals.csv") as fh:
        return list(csv.DictReader(fh))


def test_solve_resilient_writes_report(fixture_file, tmp_path, capsys):
    out = tmp_path / "res"
    assert main(["solve", str(fixture_file), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["report"]["status"] == "converged"
    assert report["z"][0] == pytest.approx(0.5, abs=1e-8)
    rows = _read_duals(out)
    assert list(rows[0]) == ["constraint", "scenario", "lambda", "slack"]
    assert float(rows[0]["lambda"]) == pytest.approx(1.0, abs=1e-8)
    assert json.loads(capsys.readouterr().out)["report"]["status"] == "converged"


def test_solve_with_saddle_dynamics(fixture_file, tmp_path):
    out = tmp_path / "ah"
    assert main(["solve", str(fixture_file), "--algorithm", "arrow-hurwicz",
                 "--tol", "1e-9", "--out", str(out)]) == EXIT_OK
    assert float(_read_duals(out)[0]["slack"]) == pytest.approx(0.5, abs=1e-6)


def test_solve_gamma_matrix_file(tmp_path):
    path = tmp_path / "pair.json"
    save_problem(opposing_pair(), path)
    gm = tmp_path / "gamma.txt"
    np.savetxt(gm, np.diag([1.0, 3.0]))
    out = tmp_path / "g"
    assert main(["solve", str(path), "--gamma-matrix", str(gm), "--out", str(out)]) == EXIT_OK
    # weighted compromise: z minimizes z^2 + (1 + z)^2 + 3 (1 - z)^2
    z = json.loads((out / "report.json").read_text())["z"][0]
    assert z == pytest.approx(2 / 5, abs=1e-8)


def test_robust_infeasible_exit_code(tmp_path):
    path = tmp_path / "pair.json"
    save_problem(opposing_pair(), path)
    assert main(["solve", str(path), "--mode", "robust"]) == EXIT_INFEASIBLE


def test_robust_surrogate_reports_probability(tmp_path, capsys):
    scn = build_scenario_set(np.linspace(0, 1, 11)[:, None])
    c = AffineConstraint(AffineMap([-1.0]), AffineMap(0.0, [-1.0]), lipschitz=1.0)
    path = tmp_path / "floor.json"
    save_problem(ProblemSpec(Objective(np.eye(1)), [c], scn), path)
    assert main(["solve", str(path), "--mode", "robust", "--delta", "0.2",
                 "--samples", "2000"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["satisfaction_probability"] == 1.0
    assert payload["epsilon"] > 0


def test_linear_cost_is_an_error(fixture_file):
    assert main(["solve", str(fixture_file), "--cost", "linear"]) == EXIT_ERROR


def test_heaviside_cost(tmp_path, capsys):
    path = tmp_path / "rand.json"
    ps = random_instance(np.random.default_rng(4), max_scn=3)
    save_problem(ps, path)
    assert main(["solve", str(path), "--cost", "heaviside", "--gamma", "1000"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["achieved_delta"] == 0.0


def test_missing_file_is_an_error(tmp_path):
    assert main(["solve", str(tmp_path / "nope.json")]) == EXIT_ERROR


def test_shepherd_outputs(tmp_path):
    out = tmp_path / "shep"
    assert main(["shepherd", "--samples", "500", "--rings", "4", "--out", str(out)]) == EXIT_OK
    result = json.loads((out / "result.json").read_text())
    assert set(result) == {"robust", "resilient"}
    with open(out / "trace.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:2] == ["step", "mode"]


def test_wind_both_modes_reports_infeasible(tmp_path):
    out = tmp_path / "wind"
    assert main(["mpc-wind", "--mode", "both", "--out", str(out)]) == EXIT_INFEASIBLE
    assert (out / "trace.csv").exists()


def test_navigate_resilient(tmp_path):
    out = tmp_path / "nav"
    assert main(["navigate", "--mode", "resilient", "--out", str(out)]) == EXIT_OK
    result = json.loads((out / "result.json").read_text())
    assert set(result) == {"0.0", "0.1", "1.0", "10.0"}


@pytest.mark.skipif(shutil.which("resilia") is None, reason="console script not installed")
def test_console_script(fixture_file):
    proc = subprocess.run(["resilia", "solve", str(fixture_file)], capture_output=True,
                          text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["report"]["status"] == "converged"
