import pytest
import sys
import os
from unittest.mock import patch
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

# Add parent directory to path to import from src
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

from src.database.connection import Base
from src.database.models import CalibrationRun, BenchmarkRecord
from src.api.easy_api import (
    ProblemData, build_phi_table, calibrate, describe_table, get_calibration_history,
    load_phi_table, run_benchmark, solve_from_config, solve_problem, tau_map
)
from src.fem.fe_space import build_space
from src.services.table_service import TableBuildSpec
from src.utils.errors import ConfigError


# Set up an in-memory SQLite database for testing
@pytest.fixture
def setup_test_db():
    # Create an engine that stores data in memory
    engine = create_engine("sqlite:///:memory:")
    # Create all tables
    Base.metadata.create_all(engine)

    # Patch the get_db function to use our test database
    with patch("src.api.easy_api.get_db", lambda: get_db_override(engine)):
        yield engine

    # Drop all tables after tests
    Base.metadata.drop_all(engine)


def get_db_override(engine):
    """Override get_db for testing purposes"""
    Session = sessionmaker(bind=engine)
    db = Session()
    try:
        yield db
    finally:
        db.close()


@pytest.fixture
def small_spec():
    return TableBuildSpec(dimension=1, degree=1, pmax=10.0, nodes=3, refinement=(), cells=8, fine_factor=2)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "[problem]\n"
        "name = test1\n"
        "cells = 8\n"
        "angle = 4\n"
        "magnitude = 400\n"
        "\n"
        "[stabilization]\n"
        "formula = H\n"
        "\n"
        "[reference]\n"
        "fine_factor = 2\n"
        "\n"
        "[output]\n"
        f"solution = {tmp_path / 'solution.csv'}\n"
        f"errors = {tmp_path / 'errors.csv'}\n"
        f"tau_map = {tmp_path / 'tau.csv'}\n"
    )
    return path


def test_problem_data():
    problem = ProblemData(name="test2", cells=8, mu=1e-3)
    assert problem.to_dict()['name'] == "test2"
    assert str(problem) == "Problem: test2 (P1, mu=0.001)"
    mesh, spec = problem.build()
    assert mesh.num_elements == 2 * 8 * 4


def test_problem_data_validation():
    with pytest.raises(ConfigError):
        ProblemData(name="test9")
    with pytest.raises(ConfigError):
        ProblemData(name="imported", mesh="mesh.txt")


def test_solve_problem_with_reference():
    outcome = solve_problem(ProblemData(cells=8, magnitude=400.0), formula="codina", fine_factor=2)
    assert outcome['formula'] == "C"
    assert outcome['solution'].space.num_dofs == 81
    low, high = outcome['peclet']
    assert 0 < low <= high
    report = outcome['errors']
    assert report.l2 > 0
    assert report.formula == "C"


def test_solve_problem_without_reference():
    outcome = solve_problem(ProblemData(cells=6), formula="1D")
    assert outcome['errors'] is None
    assert len(outcome['tau']) == 72


def test_least_squares_needs_table():
    with pytest.raises(ConfigError) as excinfo:
        solve_problem(ProblemData(cells=6), formula="LS")
    assert "--table" in str(excinfo.value)


def test_tau_map_rows():
    problem_data = ProblemData(cells=4)
    mesh, problem = problem_data.build()
    rows = tau_map(build_space(mesh, 1), problem, "codina")
    assert len(rows) == 32
    assert all(row['tau'] > 0 for row in rows)
    assert 0 < rows[0]['x'] < 1


def test_solve_from_config(config_file, tmp_path):
    outcome = solve_from_config(str(config_file))
    assert outcome['formula'] == "H"
    solution_lines = (tmp_path / "solution.csv").read_text().splitlines()
    assert solution_lines[0] == "dof,x,y,value"
    assert len(solution_lines) == 1 + 81
    error_lines = (tmp_path / "errors.csv").read_text().splitlines()
    assert error_lines[0] == "formula,degree,test,param1,param2,l2,linf"
    assert error_lines[1].startswith("H,1,test1,")
    assert len((tmp_path / "tau.csv").read_text().splitlines()) == 1 + 128


def test_solve_from_config_overrides(config_file):
    assert solve_from_config(str(config_file), formula="FV")['formula'] == "FV"


def test_solve_from_config_rejects_missing_table(config_file, tmp_path):
    with pytest.raises(ConfigError):
        solve_from_config(str(config_file), formula="LS", table_path=str(tmp_path / "missing.tab"))


def test_solve_from_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[problem]\nname = test1\ncolour = blue\n")
    with pytest.raises(ConfigError):
        solve_from_config(str(path))
    with pytest.raises(ConfigError):
        solve_from_config(str(tmp_path / "absent.cfg"))


def test_build_phi_table(small_spec, tmp_path):
    out = tmp_path / "phi.tab"
    log = tmp_path / "phi.log.csv"
    table = build_phi_table(small_spec, str(out), log_path=str(log))
    assert load_phi_table(str(out)) == table
    assert table.shape == (4,)
    assert all(table.values >= 0)
    assert len(log.read_text().splitlines()) == 1 + 3

    lines = describe_table(table)
    assert lines[0] == "dimension 1, degree 1, kind tbt, nodes (4,)"
    assert "phi along axis 0:" in lines


def test_build_phi_table_records_ledger(small_spec, tmp_path):
    url = f"sqlite:///{tmp_path / 'ledger.db'}"
    build_phi_table(small_spec, str(tmp_path / "phi.tab"), db_url=url)
    engine = create_engine(url)
    session = sessionmaker(bind=engine)()
    assert session.query(CalibrationRun).count() == 3
    session.close()


def test_calibrate_and_history(setup_test_db):
    outcome = calibrate([2.0], degree=1, method="supg", record=True)
    assert outcome['phi'] > 0
    assert not outcome['boundary_hit']
    calibrate([2.0], degree=1, method="supg", record=True)

    history = get_calibration_history(kind="supg", degree=1)
    assert len(history) == 1
    assert history[0]['peclet'] == (2.0,)
    assert history[0]['phi'] == pytest.approx(outcome['phi'])
    assert get_calibration_history(kind="tbt") == []


def test_convergence_benchmark(tmp_path):
    out = tmp_path / "convergence.csv"
    result = run_benchmark("convergence", degree=1, out=str(out))
    assert result.slope > 1.9
    text = out.read_text()
    assert text.startswith("# slope = ")
    assert "degree,mode,cells,h,l2" in text


def test_benchmark_records_rows(setup_test_db, monkeypatch):
    from src.api import easy_api
    from src.services.benchmark_service import SweepSpec

    monkeypatch.setattr(easy_api, "sweep_for", lambda suite, scale, degree, formulas, jobs, method: SweepSpec(
        degree=degree, cells=6, fine_factor=2, viscosities=[1e-2], formulas=formulas))
    result = run_benchmark("test2", formulas=["C", "H"], record=True)
    assert len(result.rows) == 2
    session = sessionmaker(bind=setup_test_db)()
    assert session.query(BenchmarkRecord).count() == 4
    session.close()


def test_benchmark_validation():
    with pytest.raises(ConfigError):
        run_benchmark("unstructured")
    with pytest.raises(ConfigError):
        run_benchmark("test7")
