"""
Assembly of the stabilized advection-diffusion system

    a(u_h, v_h) + sum_K tau_K (P(u_h), Q(v_h))_K = (f, v_h) [+ sum_K tau_K (f, Q(v_h))_K]

with a(u, v) = (a . grad u, v) + (mu grad u, grad v), and strong Dirichlet conditions.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

import config
from src.fem.fe_space import DiscreteFunction, FiniteElementSpace
from src.fem.linear_solver import SolverReport, solve
from src.fem.quadrature import QuadratureRule, quadrature_for

logger = logging.getLogger(__name__)


def zero_field(points: np.ndarray) -> np.ndarray:
    return np.zeros(len(points))


@dataclass(frozen=True)
class ProblemSpec:
    """
    One advection-diffusion instance. Every field is called with an (n, d) array of points;
    `velocity` returns (n, d), the scalar fields return (n,).
    """
    velocity: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    source: Callable[[np.ndarray], np.ndarray]
    dirichlet_value: Callable[[np.ndarray], np.ndarray] = zero_field
    name: str = "problem"


@dataclass(frozen=True)
class StabilizationMethod:
    """
    kind 'residual' uses P(u) = a.grad u - mu lap u and Q(v) = a.grad v + epsilon mu lap v,
    with epsilon = -1 (least squares), 0 (streamline upwind) or +1 (adjoint);
    kind 'term_by_term' uses P = Q = a.grad and leaves the right-hand side unstabilized.
    """
    kind: str = "residual"
    epsilon: int = 0

    def __post_init__(self):
        if self.kind not in ("residual", "term_by_term"):
            raise ValueError(f"Unknown stabilization kind '{self.kind}'")
        if self.epsilon not in (-1, 0, 1):
            raise ValueError(f"epsilon must be -1, 0 or 1, got {self.epsilon}")

    @property
    def rhs_stabilized(self) -> bool:
        return self.kind == "residual"

    @property
    def name(self) -> str:
        if self.kind == "term_by_term":
            return "tbt"
        return {-1: "ls", 0: "supg", 1: "adjoint"}[self.epsilon]

    @classmethod
    def from_name(cls, name: str) -> "StabilizationMethod":
        names = {
            "tbt": cls("term_by_term"),
            "term_by_term": cls("term_by_term"),
            "supg": cls("residual", 0),
            "ls": cls("residual", -1),
            "least_squares": cls("residual", -1),
            "adjoint": cls("residual", 1),
        }
        if name not in names:
            raise ValueError(f"Unknown stabilization method '{name}', expected one of {sorted(names)}")
        return names[name]


@dataclass
class LinearSystem:
    """Sparse matrix, right-hand side and the constrained DOFs with their prescribed values"""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or self.rhs.shape != (n,):
            raise ValueError(f"Inconsistent system: matrix {self.matrix.shape}, rhs {self.rhs.shape}")

    def __add__(self, other: "LinearSystem") -> "LinearSystem":
        return LinearSystem(self.matrix + other.matrix, self.rhs + other.rhs, self.constrained, self.values)

    def scaled(self, factor: float) -> "LinearSystem":
        return LinearSystem(self.matrix * factor, self.rhs * factor, self.constrained, self.values)


def check_tau(tau, num_elements: int) -> np.ndarray:
    """Per-element coefficients tau_K >= 0; a scalar is broadcast to every element"""
    tau = np.asarray(tau, dtype=float)
    if tau.ndim == 0:
        tau = np.full(num_elements, float(tau))
    if tau.shape != (num_elements,):
        raise ValueError(f"Expected {num_elements} coefficients tau_K, got shape {tau.shape}")
    if not np.all(np.isfinite(tau)):
        raise ValueError("Stabilization coefficients must be finite")
    if np.any(tau < 0):
        raise ValueError(f"Stabilization coefficient tau_K={tau.min()} is negative")
    return tau


class _ElementBlock:
    """Geometry, basis and coefficient data of a block of elements at the quadrature points"""

    def __init__(self, space: FiniteElementSpace, rule: QuadratureRule, selection: slice, need_laplacian: bool):
        mesh = space.mesh
        v0, B, det, B_inv = mesh.affine_maps()
        element = space.element
        xi = rule.reference_points
        self.selection = selection
        self.dofs = space.element_dofs[selection]
        self.phi = element.values(xi)
        self.weights = rule.weights[None, :] * np.abs(det[selection])[:, None]
        self.points = v0[selection][:, None, :] + np.einsum("kab,qb->kqa", B[selection], xi)
        self.gradients = np.einsum("qid,kde->kqie", element.gradients(xi), B_inv[selection])
        if need_laplacian and space.degree > 1:
            hess = element.hessians(xi)
            Bi = B_inv[selection]
            self.laplacians = np.einsum("qibc,kba,kca->kqi", hess, Bi, Bi)
        else:
            self.laplacians = np.zeros(self.gradients.shape[:3])

    def scalar(self, f: Callable) -> np.ndarray:
        k, q, d = self.points.shape
        return np.asarray(f(self.points.reshape(-1, d)), dtype=float).reshape(k, q)

    def vector(self, f: Callable) -> np.ndarray:
        k, q, d = self.points.shape
        return np.asarray(f(self.points.reshape(-1, d)), dtype=float).reshape(k, q, d)

    def diffusion(self, problem: ProblemSpec) -> np.ndarray:
        mu = self.scalar(problem.diffusion)
        bad = np.argwhere(~(mu > 0))
        if bad.size:
            k, q = bad[0]
            raise ValueError(f"Diffusion mu={mu[k, q]} is not positive at quadrature point {self.points[k, q].tolist()}")
        return mu


def _blocks(space: FiniteElementSpace, rule: QuadratureRule, need_laplacian: bool = False):
    m = space.mesh.num_elements
    for start in range(0, m, config.ASSEMBLY_CHUNK):
        yield _ElementBlock(space, rule, slice(start, min(m, start + config.ASSEMBLY_CHUNK)), need_laplacian)


def _scatter_matrix(space: FiniteElementSpace, dofs: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
    nl = dofs.shape[1]
    rows = np.repeat(dofs, nl, axis=1).ravel()
    cols = np.tile(dofs, (1, nl)).ravel()
    n = space.num_dofs
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _scatter_vector(space: FiniteElementSpace, dofs: np.ndarray, local: np.ndarray) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=space.num_dofs)


def _boundary_values(space: FiniteElementSpace, problem: ProblemSpec) -> np.ndarray:
    points = space.dof_coords[space.dirichlet_dofs]
    return np.asarray(problem.dirichlet_value(points), dtype=float).reshape(len(points))


def assemble_galerkin(space: FiniteElementSpace, problem: ProblemSpec) -> LinearSystem:
    """A[i, j] = (a.grad phi_j, phi_i) + (mu grad phi_j, grad phi_i), rhs[i] = (f, phi_i)"""
    n = space.num_dofs
    matrix = sp.csr_matrix((n, n))
    dimension = space.mesh.dimension
    for block in _blocks(space, quadrature_for(space.degree, "stiffness", dimension)):
        a = block.vector(problem.velocity)
        mu = block.diffusion(problem)
        advection = np.einsum("kq,kqd,kqjd,qi->kij", block.weights, a, block.gradients, block.phi)
        diffusion = np.einsum("kq,kqid,kqjd->kij", block.weights * mu, block.gradients, block.gradients)
        matrix = matrix + _scatter_matrix(space, block.dofs, advection + diffusion)

    rhs = np.zeros(n)
    for block in _blocks(space, quadrature_for(space.degree, "mass", dimension)):
        f = block.scalar(problem.source)
        rhs += _scatter_vector(space, block.dofs, np.einsum("kq,qi->ki", block.weights * f, block.phi))

    logger.debug("Galerkin system: %d dofs, %d nonzeros", n, matrix.nnz)
    return LinearSystem(matrix, rhs, space.dirichlet_dofs, _boundary_values(space, problem))


def _operators(block: _ElementBlock, a: np.ndarray, mu: np.ndarray, method: StabilizationMethod):
    streamline = np.einsum("kqd,kqid->kqi", a, block.gradients)
    if method.kind == "term_by_term":
        return streamline, streamline
    P = streamline - mu[:, :, None] * block.laplacians
    Q = streamline + method.epsilon * mu[:, :, None] * block.laplacians
    return P, Q


def assemble_stabilization(space: FiniteElementSpace, problem: ProblemSpec, method: StabilizationMethod,
                           tau) -> LinearSystem:
    """Adds sum_K tau_K (P(phi_j), Q(phi_i))_K and, for residual kinds, sum_K tau_K (f, Q(phi_i))_K"""
    tau = check_tau(tau, space.mesh.num_elements)
    n = space.num_dofs
    matrix = sp.csr_matrix((n, n))
    rhs = np.zeros(n)
    rule = quadrature_for(space.degree, "stabilization", space.mesh.dimension)
    for block in _blocks(space, rule, need_laplacian=method.kind == "residual"):
        a = block.vector(problem.velocity)
        mu = block.diffusion(problem)
        P, Q = _operators(block, a, mu, method)
        weights = block.weights * tau[block.selection][:, None]
        local = np.einsum("kq,kqj,kqi->kij", weights, P, Q)
        matrix = matrix + _scatter_matrix(space, block.dofs, local)
        if method.rhs_stabilized:
            f = block.scalar(problem.source)
            rhs += _scatter_vector(space, block.dofs, np.einsum("kq,kqi->ki", weights * f, Q))
    return LinearSystem(matrix, rhs, space.dirichlet_dofs, _boundary_values(space, problem))


def assemble_mass(space: FiniteElementSpace) -> sp.csr_matrix:
    """Mass matrix of the space, used for L2 inner products"""
    if "mass" not in space._cache:
        n = space.num_dofs
        matrix = sp.csr_matrix((n, n))
        for block in _blocks(space, quadrature_for(space.degree, "mass", space.mesh.dimension)):
            local = np.einsum("kq,qi,qj->kij", block.weights, block.phi, block.phi)
            matrix = matrix + _scatter_matrix(space, block.dofs, local)
        space._cache["mass"] = matrix
    return space._cache["mass"]


def element_averages(space: FiniteElementSpace, problem: ProblemSpec):
    """Quadrature-weighted element means of the velocity (m, d) and of the diffusion (m,)"""
    m, d = space.mesh.num_elements, space.mesh.dimension
    a_bar = np.empty((m, d))
    mu_bar = np.empty(m)
    for block in _blocks(space, quadrature_for(space.degree, "mass", d)):
        measure = block.weights.sum(axis=1)
        a_bar[block.selection] = np.einsum("kq,kqd->kd", block.weights, block.vector(problem.velocity)) / measure[:, None]
        mu_bar[block.selection] = np.einsum("kq,kq->k", block.weights, block.diffusion(problem)) / measure
    return a_bar, mu_bar


def apply_dirichlet(system: LinearSystem, space: FiniteElementSpace = None, values: Optional[np.ndarray] = None,
                    symmetric: bool = True) -> LinearSystem:
    """
    Strong Dirichlet conditions by row replacement.

    With symmetric=True the constrained columns are eliminated too, moving the known values to
    the right-hand side; with symmetric=False only the rows are replaced.
    """
    constrained = system.constrained if space is None else space.dirichlet_dofs
    if values is None:
        prescribed = system.values
    elif callable(values):
        points = space.dof_coords[constrained]
        prescribed = np.asarray(values(points), dtype=float).reshape(len(points))
    else:
        prescribed = np.asarray(values, dtype=float)
    n = system.matrix.shape[0]
    g = np.zeros(n)
    g[constrained] = prescribed
    free = np.ones(n)
    free[constrained] = 0.0
    keep = sp.diags(free)
    fixed = sp.diags(1.0 - free)

    if symmetric:
        rhs = system.rhs - system.matrix @ g
        matrix = keep @ system.matrix @ keep + fixed
    else:
        rhs = system.rhs.copy()
        matrix = keep @ system.matrix + fixed
    rhs[constrained] = prescribed
    return LinearSystem(sp.csr_matrix(matrix), rhs, constrained, prescribed)


def solve_stabilized(space: FiniteElementSpace, problem: ProblemSpec, method: StabilizationMethod, tau,
                     solver_method: str = None, report: list = None) -> DiscreteFunction:
    """Assemble, apply Dirichlet conditions and solve; returns u_h(tau)"""
    system = assemble_galerkin(space, problem) + assemble_stabilization(space, problem, method, tau)
    values, solver_report = solve(apply_dirichlet(system), method=solver_method)
    if report is not None:
        report.append(solver_report)
    return DiscreteFunction(space, values)


class ParametrizedSystem:
    """
    Stabilized system with a uniform coefficient: A(tau) = G + tau S, b(tau) = g + tau s.

    The Galerkin part and the unit-coefficient stabilization part are assembled once.
    """

    def __init__(self, space: FiniteElementSpace, problem: ProblemSpec, method: StabilizationMethod):
        self.space = space
        self.problem = problem
        self.method = method
        self.galerkin = assemble_galerkin(space, problem)
        self.stabilization = assemble_stabilization(space, problem, method, 1.0)

    def at(self, tau: float) -> LinearSystem:
        return apply_dirichlet(self.galerkin + self.stabilization.scaled(tau))

    def homogeneous(self, system: LinearSystem, rhs: np.ndarray) -> np.ndarray:
        """Right-hand side of a derivative problem: constrained entries vanish"""
        rhs = np.asarray(rhs, dtype=float).copy()
        rhs[system.constrained] = 0.0
        return rhs
