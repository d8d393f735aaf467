import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

# Add parent directory to path to import from src
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from src.fem.fe_space import DiscreteFunction, build_space, eval_basis, interpolate, reference_element
from src.fem.mesh import build_interval, build_structured
from src.fem.quadrature import quadrature_for, quadrature_order, rule_of_order


@pytest.fixture
def mesh():
    return build_structured((0.0, 1.0, 0.0, 1.0), 4, 4)


def _integrate(rule, f):
    xi = rule.reference_points
    return float(np.dot(rule.weights, f(xi[:, 0], xi[:, 1])))


def test_reference_triangle_moments():
    rule = rule_of_order(2, 2)
    assert rule.weights.sum() == pytest.approx(0.5)
    assert _integrate(rule, lambda x, y: x ** 2) == pytest.approx(1.0 / 12.0)
    assert _integrate(rule, lambda x, y: x ** 2 + y ** 2) == pytest.approx(1.0 / 6.0)


@pytest.mark.parametrize("order", range(0, 9))
def test_triangle_rule_exactness(order):
    rule = rule_of_order(order, 2)
    # integral of x^p y^q over the reference triangle is p! q! / (p + q + 2)!
    from math import factorial
    for p in range(order + 1):
        q = order - p
        exact = factorial(p) * factorial(q) / factorial(p + q + 2)
        assert _integrate(rule, lambda x, y: x ** p * y ** q) == pytest.approx(exact, rel=1e-12)


def test_interval_rule_exactness():
    rule = rule_of_order(5, 1)
    assert rule.weights.sum() == pytest.approx(1.0)
    assert float(np.dot(rule.weights, rule.reference_points[:, 0] ** 5)) == pytest.approx(1.0 / 6.0)


def test_quadrature_orders_per_purpose():
    assert quadrature_order(1, "mass") == 4
    assert quadrature_order(2, "stiffness") == 5
    assert quadrature_for(3, "stabilization").order == 7
    with pytest.raises(ValueError):
        quadrature_order(1, "boundary")


@pytest.mark.parametrize("degree, dofs", [(1, 25), (2, 81), (3, 169)])
def test_dof_counts(mesh, degree, dofs):
    space = build_space(mesh, degree)
    assert space.num_dofs == dofs
    assert space.element_dofs.shape == (32, (degree + 1) * (degree + 2) // 2)
    assert len(space.dirichlet_dofs) == 16 * degree


def test_interval_space():
    space = build_space(build_interval((0.0, 1.0), 5), 3)
    assert space.num_dofs == 16
    np.testing.assert_array_equal(space.dirichlet_dofs, [0, 5])


def test_unsupported_degree(mesh):
    with pytest.raises(ValueError):
        build_space(mesh, 4)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_basis_is_nodal(degree):
    element = reference_element(2, degree)
    np.testing.assert_allclose(element.values(element.nodes), np.eye(element.num_local), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(degree=st.sampled_from([1, 2, 3]), l1=st.floats(0.0, 1.0), l2=st.floats(0.0, 1.0))
def test_partition_of_unity(degree, l1, l2):
    l1, l2 = l1 * (1.0 - l2 / 2.0), l2 / 2.0
    space = build_space(build_structured((0.0, 1.0, 0.0, 1.0), 2, 2), degree)
    values, gradients = eval_basis(space, 3, [1.0 - l1 - l2, l1, l2])
    assert values.sum() == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(gradients.sum(axis=0), 0.0, atol=1e-9)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_interpolation_reproduces_polynomials(mesh, degree):
    space = build_space(mesh, degree)

    def polynomial(points):
        x, y = points[:, 0], points[:, 1]
        return (1.0 + x - 2.0 * y) ** degree + x * y ** (degree - 1)

    u = interpolate(space, polynomial)
    points = np.random.default_rng(7).uniform(0.0, 1.0, size=(50, 2))
    np.testing.assert_allclose(u.evaluate(points), polynomial(points), atol=1e-10)


def test_restrict_to_coarser_space(mesh):
    fine = build_space(build_structured((0.0, 1.0, 0.0, 1.0), 8, 8), 2)
    coarse = build_space(mesh, 2)
    u = interpolate(fine, lambda p: p[:, 0] ** 2 - p[:, 1])
    restricted = u.restrict(coarse)
    np.testing.assert_allclose(restricted.values, coarse.dof_coords[:, 0] ** 2 - coarse.dof_coords[:, 1], atol=1e-12)
    assert u.restrict(fine).values is not u.values


def test_interpolate_rejects_non_finite(mesh):
    space = build_space(mesh, 1)
    with pytest.raises(ValueError):
        interpolate(space, lambda p: 1.0 / p[:, 0])


def test_discrete_function_shape(mesh):
    with pytest.raises(ValueError):
        DiscreteFunction(build_space(mesh, 1), np.zeros(3))
