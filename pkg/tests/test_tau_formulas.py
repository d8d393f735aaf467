import math
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

# Add parent directory to path to import from src
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from src.stabilization.phi_table import PhiTable, TableAxis
from src.stabilization.tau_formulas import (ANALYTIC_FORMULAS, ElementFlowData, TauFormula, compute_tau,
                                            effective_h, one_d_phi, peclet_number, peclet_vector, tau_codina,
                                            tau_codina_colomes, tau_franca_valentin, tau_hauke, tau_least_squares,
                                            tau_one_d)


def _table(values_of):
    axes = [TableAxis(100.0, 20), TableAxis(100.0, 20)]
    nodes = axes[0].nodes
    values = np.array([[values_of(p, q) for q in nodes] for p in nodes])
    return PhiTable(dimension=2, degree=1, kind="tbt", axes=axes, values=values)


def test_codina_value():
    data = ElementFlowData.single([1.0, 0.0], mu=1.0, h=1.0)
    assert tau_codina(data)[0] == pytest.approx(1.0 / math.sqrt(20.0))


def test_one_d_limits():
    h, mu = 0.1, 1.0
    diffusive = ElementFlowData.single([1e-2], mu=mu, h=h)
    assert tau_one_d(diffusive)[0] == pytest.approx(h ** 2 / (12.0 * mu), rel=1e-6)
    advective = ElementFlowData.single([1e5], mu=mu, h=h)
    assert tau_one_d(advective)[0] == pytest.approx(h / 2e5, rel=1e-3)


def test_one_d_phi_series_branch_is_continuous():
    below = one_d_phi(np.array([0.999e-6]))[0]
    above = one_d_phi(np.array([1.001e-6]))[0]
    assert below == pytest.approx(above, rel=1e-2)
    assert one_d_phi(np.array([0.0]))[0] == 0.0
    assert one_d_phi(np.array([2.0]))[0] == pytest.approx(2.0 / math.tanh(2.0) - 1.0)


def test_zero_velocity():
    data = ElementFlowData.single([0.0, 0.0], mu=2.0, h=0.5)
    assert tau_one_d(data)[0] == pytest.approx(0.25 / 24.0)
    assert tau_hauke(data)[0] == pytest.approx(0.25 / (24.24 * 2.0))
    assert tau_codina(data)[0] == pytest.approx(0.25 / 8.0)
    assert tau_franca_valentin(data)[0] == pytest.approx(0.25 / 6.0 / 2.0)


def test_hauke_switches_at_crossover():
    h, mu = 0.1, 1.0
    crossover = 24.24 * mu / (math.sqrt(3.0) * h)
    diffusive = h ** 2 / (24.24 * mu)
    below = ElementFlowData.single([0.9 * crossover, 0.0], mu=mu, h=h)
    above = ElementFlowData.single([1.1 * crossover, 0.0], mu=mu, h=h)
    at = ElementFlowData.single([crossover, 0.0], mu=mu, h=h)
    assert tau_hauke(below)[0] == pytest.approx(diffusive)
    assert tau_hauke(above)[0] == pytest.approx(h / (math.sqrt(3.0) * 1.1 * crossover))
    assert tau_hauke(above)[0] < diffusive
    assert tau_hauke(at)[0] == pytest.approx(diffusive, rel=1e-12)


def test_franca_valentin_branches():
    slow = ElementFlowData.single([1.0, 0.0], mu=1.0, h=1.0)
    fast = ElementFlowData.single([100.0, 0.0], mu=1.0, h=1.0)
    assert tau_franca_valentin(slow)[0] == pytest.approx(1.0 / 6.0)
    assert tau_franca_valentin(fast)[0] == pytest.approx(1.0 / 200.0)


def test_codina_colomes_uses_flow_length():
    data = ElementFlowData.single([10.0, 0.0], mu=0.1, h=1.0, h_flow=0.5)
    longer = ElementFlowData.single([10.0, 0.0], mu=0.1, h=1.0, h_flow=1.0)
    assert tau_codina_colomes(data)[0] < tau_codina_colomes(longer)[0]
    assert tau_codina_colomes(longer)[0] == pytest.approx(tau_codina(longer)[0])


def test_higher_degree_uses_scaled_length():
    p1 = ElementFlowData.single([1.0, 1.0], mu=0.01, h=0.3, degree=1)
    p3 = ElementFlowData.single([1.0, 1.0], mu=0.01, h=0.9, degree=3)
    for formula in ANALYTIC_FORMULAS:
        assert compute_tau(formula, p3)[0] == pytest.approx(compute_tau(formula, p1)[0])
    with pytest.raises(ValueError):
        effective_h(1.0, 4)


def test_peclet_numbers():
    data = ElementFlowData.single([3.0, -4.0], mu=0.5, h=0.2)
    np.testing.assert_allclose(peclet_vector(data), [[0.6, -0.8]])
    assert peclet_number(data)[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        peclet_vector(ElementFlowData.single([1.0, 0.0], mu=0.0, h=1.0))


@settings(max_examples=50, deadline=None)
@given(
    ax=st.floats(-50.0, 50.0), ay=st.floats(-50.0, 50.0),
    mu=st.floats(1e-3, 10.0), h=st.floats(1e-3, 1.0), factor=st.floats(1e-2, 1e2),
)
def test_scaling_law(ax, ay, mu, h, factor):
    data = ElementFlowData.single([ax, ay], mu=mu, h=h, h_flow=0.7 * h)
    scaled = data.scaled(factor)
    for formula in ANALYTIC_FORMULAS:
        assert compute_tau(formula, scaled)[0] == pytest.approx(compute_tau(formula, data)[0] / factor, rel=1e-9)


def test_least_squares_from_table():
    table = _table(lambda p, q: 0.5)
    data = ElementFlowData.single([10.0, 5.0], mu=0.1, h=0.2)
    expected = 0.2 / math.hypot(10.0, 5.0) * 0.5
    assert tau_least_squares(data, table)[0] == pytest.approx(expected)
    assert compute_tau("LS", data, table)[0] == pytest.approx(expected)


def test_least_squares_symmetric_under_sign_flips():
    table = _table(lambda p, q: p / (1.0 + p + q))
    data = ElementFlowData.single([4.0, 2.0], mu=0.1, h=0.2)
    flipped = ElementFlowData.single([-4.0, 2.0], mu=0.1, h=0.2)
    assert tau_least_squares(flipped, table)[0] == pytest.approx(tau_least_squares(data, table)[0])


def test_least_squares_flow_variant():
    table = _table(lambda p, q: 0.25)
    data = ElementFlowData.single([1.0, 1.0], mu=0.1, h=0.4, h_flow=0.2)
    assert tau_least_squares(data, table, "flow")[0] == pytest.approx(0.2 / math.sqrt(2.0) * 0.25)
    with pytest.raises(ValueError):
        tau_least_squares(data, table, "streamline")


def test_least_squares_zero_velocity_falls_back():
    table = _table(lambda p, q: 0.25)
    data = ElementFlowData.single([0.0, 0.0], mu=0.1, h=0.4)
    assert tau_least_squares(data, table)[0] == pytest.approx(tau_codina(data)[0])


def test_least_squares_dimension_mismatch():
    table = _table(lambda p, q: 0.25)
    with pytest.raises(ValueError):
        tau_least_squares(ElementFlowData.single([1.0], mu=0.1, h=0.4), table)


def test_table_formula_needs_table():
    data = ElementFlowData.single([1.0, 0.0], mu=1.0, h=1.0)
    with pytest.raises(ValueError, match="--table"):
        compute_tau(TauFormula.LEAST_SQUARES, data)


def test_formula_parsing():
    assert TauFormula.parse("C") is TauFormula.CODINA
    assert TauFormula.parse("franca_valentin") is TauFormula.FRANCA_VALENTIN
    assert TauFormula.LEAST_SQUARES_FLOW.label == "LSflow"
    assert TauFormula.LEAST_SQUARES.needs_table
    assert not TauFormula.HAUKE.needs_table
    with pytest.raises(ValueError):
        TauFormula.parse("shakib")
