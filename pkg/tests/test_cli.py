import os
import sys

import pytest

# Add parent directory to path to import from src
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from src.api import cli
from src.api.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from src.stabilization.phi_table import read_table
from src.utils.errors import CalibrationError

BUILD_ARGS = ["build-table", "--dim", "1", "--degree", "1", "--pmax", "10", "--nodes", "10", "--refine", "",
              "--cells", "8", "--fine-factor", "2"]


@pytest.fixture
def table_path(tmp_path):
    path = tmp_path / "phi1d.tab"
    assert main(BUILD_ARGS + ["--out", str(path)]) == EXIT_OK
    return path


def test_build_table(capsys, table_path):
    table = read_table(str(table_path))
    assert table.shape == (11,)
    assert table.metadata["reference"] == "one_d"
    assert os.path.exists(f"{table_path}.log.csv")
    assert "Wrote" in capsys.readouterr().out


def test_inspect_table(table_path, capsys):
    assert main(["inspect-table", str(table_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "dimension 1, degree 1, kind tbt" in out
    assert "phi along axis 0:" in out


def test_inspect_broken_table(tmp_path, capsys):
    path = tmp_path / "broken.tab"
    path.write_text("stabtable 7\n")
    assert main(["inspect-table", str(path)]) == EXIT_USAGE
    assert "Error:" in capsys.readouterr().err


def test_solve_with_config(tmp_path, capsys):
    solution = tmp_path / "u.csv"
    config_path = tmp_path / "run.cfg"
    config_path.write_text(f"[problem]\nname = test2\ncells = 8\nmu = 0.01\n\n[output]\nsolution = {solution}\n")
    assert main(["solve", "--config", str(config_path), "--formula", "CC"]) == EXIT_OK
    assert "Solved with CC" in capsys.readouterr().out
    assert solution.exists()


def test_least_squares_without_table(tmp_path, capsys):
    config_path = tmp_path / "run.cfg"
    config_path.write_text("[problem]\nname = test1\ncells = 4\n")
    assert main(["solve", "--config", str(config_path), "--formula", "LS"]) == EXIT_USAGE
    assert "--table" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main(["solve", "--config", "x.cfg", "--bogus"]) == EXIT_USAGE
    assert main(["bench", "--suite", "test9"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_calibrate_command(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    assert main(["calibrate", "--peclet", "3", "--kind", "supg", "--trace", str(trace)]) == EXIT_OK
    assert "phi" in capsys.readouterr().out
    assert "iterate,tau,J,dJ,d2J" in trace.read_text()


def test_numerical_failure_exit_code(monkeypatch, capsys):
    def fail(peclet, degree, method=None, **options):
        raise CalibrationError("no admissible minimum")

    monkeypatch.setattr(cli, "calibrate_peclet", fail)
    assert main(["calibrate", "--peclet", "3"]) == EXIT_NUMERICAL
    assert "Numerical failure" in capsys.readouterr().err


def test_surface_command(tmp_path):
    out = tmp_path / "surface.csv"
    assert main(["surface", "--angles", "0,0.5", "--tau-range", "1e-4,1e-2,3", "--cells", "4", "--out", str(out)]) \
        == EXIT_OK
    assert len(out.read_text().splitlines()) == 1 + 6
    assert main(["surface", "--angles", "0", "--out", str(out)]) == EXIT_USAGE


def test_convergence_bench(capsys):
    assert main(["bench", "--suite", "convergence", "--degree", "1"]) == EXIT_OK
    assert "P1 galerkin slope" in capsys.readouterr().out
