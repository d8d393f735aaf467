"""
Quadrature rules on the reference simplex
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

import config

PURPOSES = ("mass", "stiffness", "stabilization")


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """
    points: barycentric coordinates (nq, d+1); weights: sum to the reference measure
    (1 on the unit interval, 1/2 on the unit triangle); order: exact polynomial degree.
    """
    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def reference_points(self) -> np.ndarray:
        """Reference coordinates xi = (lambda_1, ..., lambda_d)"""
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def rule_of_order(order: int, dimension: int) -> QuadratureRule:
    """Gauss rule exact for polynomials of total degree `order`"""
    if order < 0:
        raise ValueError(f"Quadrature order must be non-negative, got {order}")
    n = max(1, (order + 2) // 2)
    if dimension == 1:
        t, w = roots_legendre(n)
        x = 0.5 * (t + 1.0)
        points = np.column_stack([1.0 - x, x])
        return QuadratureRule(points=points, weights=0.5 * w, order=order)
    if dimension != 2:
        raise ValueError(f"Unsupported dimension {dimension}")

    # Collapsed (Duffy) product rule: x = u, y = (1 - u) v with Jacobian (1 - u)
    tu, wu = roots_jacobi(n, 1.0, 0.0)
    tv, wv = roots_legendre(n)
    u = 0.5 * (tu + 1.0)
    v = 0.5 * (tv + 1.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = ((1.0 - U) * V).ravel()
    weights = np.outer(wu / 4.0, wv / 2.0).ravel()
    points = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(points=points, weights=weights, order=order)


def quadrature_order(degree: int, purpose: str) -> int:
    if purpose not in PURPOSES:
        raise ValueError(f"Unknown quadrature purpose '{purpose}', expected one of {PURPOSES}")
    return config.QUADRATURE_ORDERS[purpose](degree)


def quadrature_for(degree: int, purpose: str, dimension: int = 2) -> QuadratureRule:
    """Rule used for the given Lagrange degree and integrand family"""
    return rule_of_order(quadrature_order(degree, purpose), dimension)
