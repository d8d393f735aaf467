import io
import os
import sys

import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

# Add parent directory to path to import from src
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from src.database.connection import Base
from src.fem.assembly import StabilizationMethod
from src.services import table_service
from src.services.calibration_service import CalibrationResult, TraceEntry, calibrate_peclet
from src.services.ledger_service import LedgerService
from src.services.table_service import TableBuildSpec, build_table
from src.stabilization.phi_table import extrapolate_origin, save_table
from src.utils.errors import CalibrationError


# Set up an in-memory SQLite database for testing
@pytest.fixture
def db_session():
    engine = create_engine("sqlite:///:memory:")
    Base.metadata.create_all(engine)

    Session = sessionmaker(bind=engine)
    session = Session()

    yield session

    session.close()


@pytest.fixture
def small_spec():
    return TableBuildSpec(dimension=1, degree=1, pmax=10.0, nodes=4, refinement=(), cells=10, fine_factor=2)


def _fake_calibration(phi_of, failing=()):
    def calibrate(peclet, degree, method=None, **options):
        p = float(np.max(np.abs(peclet)))
        if p in failing:
            raise CalibrationError(f"no minimum at P={p}")
        return CalibrationResult(tau_opt=phi_of(p) / (1.0 + p), J_min=1e-3, phi=phi_of(p),
                                 trace=[TraceEntry(0.1, 1e-3, -1.0, 2.0)], iterations=3)
    return calibrate


def test_spec_validation():
    with pytest.raises(ValueError):
        TableBuildSpec(dimension=3)
    with pytest.raises(ValueError):
        TableBuildSpec(nodes=1)
    with pytest.raises(ValueError):
        TableBuildSpec(kind="gls")
    assert TableBuildSpec(pmax=10.0, refinement=(0.5, 20.0, 1.0)).refinement == (0.5, 1.0)


def test_build_fills_grid(monkeypatch, small_spec):
    monkeypatch.setattr(table_service, "calibrate_peclet", _fake_calibration(lambda p: p / (1.0 + p)))
    log = []
    table = build_table(small_spec, log=log)
    nodes = table.axes[0].nodes
    np.testing.assert_allclose(nodes, [0.0, 2.5, 5.0, 7.5, 10.0])
    np.testing.assert_allclose(table.values[1:], nodes[1:] / (1.0 + nodes[1:]))
    assert table.values[0] == pytest.approx(extrapolate_origin(nodes, table.values))
    assert table.metadata["extrapolated_origin"] == "true"
    assert table.metadata["reference"] == "one_d"
    assert "monotonicity" not in table.metadata
    assert len(log) == 4
    assert all(row[-1] == "ok" for row in log)


def test_failed_node_aborts_build(monkeypatch, small_spec):
    monkeypatch.setattr(table_service, "calibrate_peclet", _fake_calibration(lambda p: p / (1.0 + p), failing=(5.0,)))
    log = []
    with pytest.raises(CalibrationError) as info:
        build_table(small_spec, log=log)
    assert info.value.node == (2,)
    assert any("no minimum" in row[-1] for row in log)


def test_skip_failed_fills_from_neighbour(monkeypatch, small_spec):
    monkeypatch.setattr(table_service, "calibrate_peclet", _fake_calibration(lambda p: p / (1.0 + p), failing=(5.0,)))
    small_spec.skip_failed = True
    table = build_table(small_spec)
    assert table.values[2] == pytest.approx(table.values[1])
    assert table.metadata["failed_nodes"] == "2"


def test_non_monotone_table_is_flagged(monkeypatch, small_spec):
    monkeypatch.setattr(table_service, "calibrate_peclet", _fake_calibration(lambda p: 1.0 / p))
    table = build_table(small_spec)
    assert table.metadata["monotonicity"].startswith("warning:")


def test_build_records_ledger(monkeypatch, small_spec, db_session):
    monkeypatch.setattr(table_service, "calibrate_peclet", _fake_calibration(lambda p: p / (1.0 + p)))
    ledger = LedgerService(db_session)
    build_table(small_spec, ledger=ledger)
    build_table(small_spec, ledger=ledger)
    runs = ledger.get_runs(kind="tbt", degree=1)
    assert [run.peclet_x for run in runs] == [2.5, 5.0, 7.5, 10.0]
    assert len(runs[0].iterates) == 1


def test_two_dimensional_grid(monkeypatch):
    monkeypatch.setattr(table_service, "calibrate_peclet", _fake_calibration(lambda p: p / (1.0 + p)))
    spec = TableBuildSpec(dimension=2, degree=1, pmax=4.0, nodes=2, refinement=(1.0,), cells=4, fine_factor=2)
    log = []
    table = build_table(spec, log=log)
    assert table.shape == (4, 4)
    assert len(log) == 15
    assert table.values[3, 3] == pytest.approx(0.8)


def test_real_build_is_deterministic(small_spec):
    first, second = io.StringIO(), io.StringIO()
    save_table(build_table(small_spec), first)
    save_table(build_table(small_spec), second)
    assert first.getvalue() == second.getvalue()
    table_text = first.getvalue()
    assert "dim 1 degree 1 kind tbt" in table_text


def test_parallel_build_matches_serial(small_spec):
    serial = build_table(small_spec)
    small_spec.jobs = 2
    parallel = build_table(small_spec)
    assert parallel == serial


def test_interpolated_phi_matches_direct_calibration_between_nodes():
    spec = TableBuildSpec(dimension=1, degree=1, pmax=50.0, nodes=10, cells=20, fine_factor=4)
    table = build_table(spec)
    nodes = table.axes[0].nodes
    midpoints = 0.5 * (nodes[:-1] + nodes[1:])
    method = StabilizationMethod.from_name("tbt")
    for p in midpoints:
        direct = calibrate_peclet([p], 1, method, cells=20, fine_factor=4).phi
        assert float(table.interpolate([p])) == pytest.approx(direct, rel=0.05)
