import math
import os
import sys

import numpy as np
import pytest

# Add parent directory to path to import from src
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from src.fem.assembly import StabilizationMethod
from src.fem.fe_space import build_space
from src.fem.fields import constant_problem
from src.fem.mesh import build_interval, build_structured
from src.services.calibration_service import (CalibrationProblem, Calibrator, calibrate_peclet, default_bracket,
                                              functional_surface, minimize_J, reference_solution, training_problem,
                                              write_surface, write_trace)
from src.stabilization.tau_formulas import ElementFlowData, TauFormula, tau_one_d
from src.utils.errors import CalibrationError

SUPG = StabilizationMethod.from_name("supg")
TBT = StabilizationMethod.from_name("tbt")


def _one_d_optimum(peclet: float, cells: int) -> float:
    h = 1.0 / cells
    a = 2.0 * peclet / h
    return float(tau_one_d(ElementFlowData.single([a], mu=1.0, h=h))[0])


@pytest.fixture
def square_calibration():
    space = build_space(build_structured((0.0, 1.0, 0.0, 1.0), 8, 8), 1)
    problem = constant_problem([40.0, 16.0], 1.0)
    alpha_min, alpha_max = default_bracket(space, problem)
    return CalibrationProblem(space, problem, TBT, alpha_min, alpha_max, fine_factor=2)


@pytest.fixture
def square_calibrator(square_calibration):
    return Calibrator(square_calibration)


@pytest.mark.parametrize("peclet", [0.5, 1.6667, 5.0, 20.0, 100.0])
def test_recovers_one_d_optimum(peclet):
    result = calibrate_peclet([peclet], 1, SUPG, cells=20, fine_factor=4)
    assert result.tau_opt == pytest.approx(_one_d_optimum(peclet, 20), rel=1e-3)
    assert not result.boundary_hit
    assert result.phi == pytest.approx(0.5 * (1.0 / math.tanh(peclet) - 1.0 / peclet), rel=1e-3)


@pytest.mark.parametrize("peclet", [1.6667, 100.0])
def test_functional_vanishes_at_one_d_optimum(peclet):
    calibration = training_problem([peclet], 1, SUPG, cells=20, fine_factor=4)
    calibrator = Calibrator(calibration)
    result = calibrator.minimize()
    assert result.converged
    assert result.J_min <= 1e-12 * calibrator.scale


def test_exact_reference_gives_same_optimum():
    mu = 0.05
    space = build_space(build_interval((0.0, 1.0), 10), 1)
    problem = constant_problem([1.0], mu)
    alpha_min, alpha_max = default_bracket(space, problem)

    def exact(points):
        x = points[:, 0]
        return x - np.expm1(x / mu) / np.expm1(1.0 / mu)

    calibration = CalibrationProblem(space, problem, SUPG, alpha_min, alpha_max, exact=exact)
    result = minimize_J(calibration)
    expected = tau_one_d(ElementFlowData.single([1.0], mu=mu, h=0.1))[0]
    assert result.tau_opt == pytest.approx(expected, rel=1e-3)


def test_derivatives_match_finite_differences(square_calibrator, square_calibration):
    lo, hi = square_calibration.bracket
    for tau in (math.sqrt(lo * hi) / 10.0, math.sqrt(lo * hi) * 10.0):
        J, dJ, d2J = square_calibrator.derivatives_J(tau)
        delta = 1e-4 * tau
        fd_first = (square_calibrator.functional_J(tau + delta) - square_calibrator.functional_J(tau - delta)) / (2 * delta)
        fd_second = (square_calibrator.derivatives_J(tau + delta)[1]
                     - square_calibrator.derivatives_J(tau - delta)[1]) / (2 * delta)
        assert dJ == pytest.approx(fd_first, rel=1e-4, abs=1e-9 * J / tau)
        assert d2J == pytest.approx(fd_second, rel=1e-3, abs=1e-8 * J / tau ** 2)


def test_second_sensitivity_matches_finite_differences(square_calibrator, square_calibration):
    lo, hi = square_calibration.bracket
    tau = math.sqrt(lo * hi)
    delta = 1e-4 * tau
    w = square_calibrator.sensitivity_w(tau, square_calibrator.sensitivity_z(tau)).values
    fd = (square_calibrator.sensitivity_z(tau + delta).values
          - square_calibrator.sensitivity_z(tau - delta).values) / (2 * delta)
    assert np.linalg.norm(w - fd) <= 1e-4 * np.linalg.norm(w)


def test_minimizer_is_a_local_minimum(square_calibrator):
    result = square_calibrator.minimize()
    assert result.converged
    assert result.strategy == "newton"
    J = result.J_min
    assert J <= square_calibrator.functional_J(1.1 * result.tau_opt)
    assert J <= square_calibrator.functional_J(0.9 * result.tau_opt)
    assert result.trace[-1].tau == result.tau_opt


def test_golden_section_agrees_with_newton(square_calibrator):
    newton = square_calibrator.minimize()
    golden = square_calibrator.minimize_golden()
    assert golden.strategy == "golden"
    assert golden.tau_opt == pytest.approx(newton.tau_opt, rel=1e-3)
    assert golden.J_min == pytest.approx(newton.J_min, rel=1e-6)


def test_optimum_beyond_bracket_returns_end():
    calibration = training_problem([5.0], 1, SUPG, cells=20, fine_factor=4)
    optimum = _one_d_optimum(5.0, 20)
    h2 = calibration.h ** 2
    calibration.alpha_min, calibration.alpha_max = optimum / 100.0 / h2, optimum / 10.0 / h2
    result = Calibrator(calibration).minimize()
    assert result.boundary_hit
    assert result.tau_opt == pytest.approx(calibration.bracket[1])
    assert result.iterations == 2


def test_diffusion_only_sensitivity_vanishes():
    space = build_space(build_structured((0.0, 1.0, 0.0, 1.0), 4, 4), 1)
    problem = constant_problem([0.0, 0.0], 1.0)
    alpha_min, alpha_max = default_bracket(space, problem)
    calibrator = Calibrator(CalibrationProblem(space, problem, TBT, alpha_min, alpha_max, fine_factor=2))
    z = calibrator.sensitivity_z(0.01)
    np.testing.assert_allclose(z.values, 0.0, atol=1e-14)


def test_inadmissible_tau(square_calibrator):
    with pytest.raises(CalibrationError):
        square_calibrator.functional_J(-1.0)


def test_bracket_validation(square_calibration):
    with pytest.raises(ValueError):
        CalibrationProblem(square_calibration.space, square_calibration.problem, TBT, 1.0, 0.5)
    with pytest.raises(ValueError):
        CalibrationProblem(square_calibration.space, square_calibration.problem, TBT, 0.1, 1.0, fine_factor=0)


def test_default_bracket_encloses_analytic_coefficients(square_calibration):
    lo, hi = square_calibration.bracket
    reference = reference_solution(square_calibration.problem, square_calibration.space.mesh, 1, 2)
    assert reference.space.mesh.num_elements == 4 * square_calibration.space.mesh.num_elements
    assert lo < hi
    assert hi / lo > 200.0
    with pytest.raises(ValueError):
        default_bracket(square_calibration.space, square_calibration.problem, upper_factor=0.5)


@pytest.mark.parametrize("seed", range(5))
def test_newton_finds_global_minimum_on_default_bracket(seed):
    rng = np.random.default_rng(seed)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    magnitude = 10.0 ** rng.uniform(0.0, 2.0)
    peclet = [magnitude * math.cos(angle), magnitude * math.sin(angle)]
    calibrator = Calibrator(training_problem(peclet, 1, TBT, cells=8, fine_factor=2))
    result = calibrator.minimize()
    assert result.converged

    lo, hi = calibrator.calibration.bracket
    grid = np.geomspace(lo, hi, 15)
    assert result.J_min <= min(calibrator.functional_J(tau) for tau in grid) * (1.0 + 1e-6)
    if not result.boundary_hit:
        assert calibrator.derivatives_J(result.tau_opt)[2] > 0

    tau = math.sqrt(lo * hi)
    J, dJ, _ = calibrator.derivatives_J(tau)
    delta = 1e-4 * tau
    fd = (calibrator.functional_J(tau + delta) - calibrator.functional_J(tau - delta)) / (2 * delta)
    assert dJ == pytest.approx(fd, rel=1e-4, abs=1e-9 * J / tau)


def test_training_problem_peclet():
    calibration = training_problem([3.0, 1.5], 1, TBT, cells=10, fine_factor=2)
    h = math.sqrt(2.0) / 10.0
    a = np.array([3.0, 1.5]) * 2.0 / h
    np.testing.assert_allclose(calibration.problem.velocity(np.zeros((1, 2)))[0], a)
    with pytest.raises(ValueError):
        training_problem([0.0, 0.0], 1)


def test_trace_and_surface_files(square_calibrator, tmp_path):
    result = square_calibrator.minimize()
    trace_path = tmp_path / "trace.csv"
    write_trace(str(trace_path), result)
    lines = trace_path.read_text().splitlines()
    assert any(line.startswith("iterate,tau,J,dJ,d2J") for line in lines)

    rows = functional_surface([0.0, math.pi / 4], [1e-4, 1e-3, 1e-2], magnitude=20.0, cells=6, fine_factor=2)
    assert len(rows) == 6
    assert all(J >= 0 for _, _, J in rows)
    surface_path = tmp_path / "surface.csv"
    write_surface(str(surface_path), rows)
    assert "angle,tau,J" in surface_path.read_text()
