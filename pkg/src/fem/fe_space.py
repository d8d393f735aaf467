"""
Lagrange finite element spaces P1, P2 and P3 on simplicial meshes
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from src.fem.mesh import Mesh, locate_points

logger = logging.getLogger(__name__)

SUPPORTED_DEGREES = (1, 2, 3)
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


class LagrangeElement:
    """
    Nodal basis of P_l on the reference simplex, built from the monomial Vandermonde matrix.

    Local node order: vertices, then l-1 nodes per edge (v0v1, v1v2, v2v0, each running from
    its first to its second vertex), then interior nodes.
    """

    def __init__(self, dimension: int, degree: int):
        if degree not in SUPPORTED_DEGREES:
            raise ValueError(f"Unsupported Lagrange degree {degree}, expected one of {SUPPORTED_DEGREES}")
        if dimension not in (1, 2):
            raise ValueError(f"Unsupported dimension {dimension}")
        self.dimension = dimension
        self.degree = degree
        if dimension == 1:
            self.exponents = np.array([[p] for p in range(degree + 1)])
        else:
            self.exponents = np.array([[p, t - p] for t in range(degree + 1) for p in range(t, -1, -1)])
        self.nodes = self._reference_nodes()
        vandermonde = self._monomials(self.nodes)
        self.coefficients = np.linalg.inv(vandermonde)

    @property
    def num_local(self) -> int:
        return len(self.nodes)

    def _reference_nodes(self) -> np.ndarray:
        l = self.degree
        if self.dimension == 1:
            interior = [[s / l] for s in range(1, l)]
            return np.array([[0.0], [1.0]] + interior)
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        nodes = list(vertices)
        for a, b in LOCAL_EDGES:
            for s in range(1, l):
                nodes.append(vertices[a] + s / l * (vertices[b] - vertices[a]))
        if l == 3:
            nodes.append(np.array([1.0, 1.0]) / 3.0)
        return np.array(nodes)

    def _monomials(self, xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(xi)
        return np.prod(xi[:, None, :] ** self.exponents[None, :, :], axis=2)

    def values(self, xi: np.ndarray) -> np.ndarray:
        """Basis values at reference points, shape (npts, nloc)"""
        return self._monomials(xi) @ self.coefficients

    def gradients(self, xi: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (npts, nloc, d)"""
        xi = np.atleast_2d(xi)
        columns = []
        for axis in range(self.dimension):
            columns.append(self._derivative(xi, (axis,)) @ self.coefficients)
        return np.stack(columns, axis=2)

    def hessians(self, xi: np.ndarray) -> np.ndarray:
        """Reference second derivatives, shape (npts, nloc, d, d)"""
        xi = np.atleast_2d(xi)
        d = self.dimension
        result = np.empty((xi.shape[0], self.num_local, d, d))
        for a in range(d):
            for b in range(d):
                result[:, :, a, b] = self._derivative(xi, (a, b)) @ self.coefficients
        return result

    def _derivative(self, xi: np.ndarray, axes) -> np.ndarray:
        exponents = self.exponents.astype(float).copy()
        factor = np.ones(len(exponents))
        for axis in axes:
            factor *= exponents[:, axis]
            exponents[:, axis] = np.maximum(exponents[:, axis] - 1.0, 0.0)
        return factor[None, :] * np.prod(xi[:, None, :] ** exponents[None, :, :], axis=2)


@lru_cache(maxsize=None)
def reference_element(dimension: int, degree: int) -> LagrangeElement:
    return LagrangeElement(dimension, degree)


@dataclass(frozen=True, eq=False)
class FiniteElementSpace:
    """
    Globally numbered Lagrange space: DOFs are vertices, then edge nodes, then interior nodes.
    """
    mesh: Mesh
    degree: int
    dof_coords: np.ndarray
    element_dofs: np.ndarray
    dirichlet_dofs: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_dofs(self) -> int:
        return self.dof_coords.shape[0]

    @property
    def element(self) -> LagrangeElement:
        return reference_element(self.mesh.dimension, self.degree)

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.num_dofs, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)


@dataclass(eq=False)
class DiscreteFunction:
    """Coefficient vector of a finite element function, indexed by DOF"""
    space: FiniteElementSpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.num_dofs,):
            raise ValueError(f"Expected {self.space.num_dofs} coefficients, got shape {self.values.shape}")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Point values anywhere in the mesh (point location, then local basis evaluation)"""
        elements, xi = locate_points(self.space.mesh, points)
        basis = self.space.element.values(xi)
        coefficients = self.values[self.space.element_dofs[elements]]
        return np.einsum("ni,ni->n", basis, coefficients)

    def restrict(self, space: FiniteElementSpace) -> "DiscreteFunction":
        """Lagrange interpolation of this function onto another space (Pi_h)"""
        if space is self.space:
            return DiscreteFunction(space, self.values.copy())
        return DiscreteFunction(space, self.evaluate(space.dof_coords))


def build_space(mesh: Mesh, degree: int) -> FiniteElementSpace:
    if degree not in SUPPORTED_DEGREES:
        raise ValueError(f"Unsupported Lagrange degree {degree}, expected one of {SUPPORTED_DEGREES}")
    if mesh.dimension == 1:
        return _build_interval_space(mesh, degree)
    return _build_triangle_space(mesh, degree)


def _build_interval_space(mesh: Mesh, degree: int) -> FiniteElementSpace:
    nv, m = mesh.num_nodes, mesh.num_elements
    n_int = degree - 1
    dofs = np.empty((m, degree + 1), dtype=np.int64)
    dofs[:, :2] = mesh.elements
    coords = [mesh.nodes]
    if n_int:
        dofs[:, 2:] = nv + np.arange(m)[:, None] * n_int + np.arange(n_int)[None, :]
        x0 = mesh.nodes[mesh.elements[:, 0]]
        x1 = mesh.nodes[mesh.elements[:, 1]]
        t = np.arange(1, degree) / degree
        interior = x0[:, None, :] + t[None, :, None] * (x1 - x0)[:, None, :]
        coords.append(interior.reshape(-1, 1))
    dof_coords = np.vstack(coords)
    return FiniteElementSpace(mesh=mesh, degree=degree, dof_coords=dof_coords, element_dofs=dofs,
                              dirichlet_dofs=np.asarray(mesh.boundary_nodes, dtype=np.int64))


def _build_triangle_space(mesh: Mesh, degree: int) -> FiniteElementSpace:
    nv, m = mesh.num_nodes, mesh.num_elements
    per_edge = degree - 1
    n_int = 1 if degree == 3 else 0
    element = reference_element(2, degree)

    dofs = np.empty((m, element.num_local), dtype=np.int64)
    dofs[:, :3] = mesh.elements
    coords = [mesh.nodes]
    dirichlet = [np.asarray(mesh.boundary_nodes, dtype=np.int64)]

    if per_edge:
        edges, element_edges, counts = mesh.edges()
        ne = len(edges)
        for j, (a, b) in enumerate(LOCAL_EDGES):
            forward = mesh.elements[:, a] < mesh.elements[:, b]
            for s in range(1, degree):
                offset = np.where(forward, s - 1, degree - 1 - s)
                dofs[:, 3 + j * per_edge + s - 1] = nv + element_edges[:, j] * per_edge + offset
        t = np.arange(1, degree) / degree
        start = mesh.nodes[edges[:, 0]]
        stop = mesh.nodes[edges[:, 1]]
        edge_nodes = start[:, None, :] + t[None, :, None] * (stop - start)[:, None, :]
        coords.append(edge_nodes.reshape(-1, 2))
        boundary_edges = np.flatnonzero(counts == 1)
        dirichlet.append((nv + boundary_edges[:, None] * per_edge + np.arange(per_edge)[None, :]).ravel())
        interior_start = nv + ne * per_edge
    else:
        interior_start = nv

    if n_int:
        dofs[:, -1] = interior_start + np.arange(m)
        coords.append(mesh.barycenters())

    return FiniteElementSpace(mesh=mesh, degree=degree, dof_coords=np.vstack(coords), element_dofs=dofs,
                              dirichlet_dofs=np.sort(np.concatenate(dirichlet)))


def eval_basis(space: FiniteElementSpace, k: int, barycentric):
    """
    Values and physical gradients of the local basis of element k at a barycentric point.

    Returns (values (nloc,), gradients (nloc, d)).
    """
    lam = np.asarray(barycentric, dtype=float).ravel()
    if lam.size != space.mesh.dimension + 1:
        raise ValueError(f"Expected {space.mesh.dimension + 1} barycentric coordinates, got {lam.size}")
    xi = lam[1:][None, :]
    _, _, _, B_inv = space.mesh.affine_maps()
    values = space.element.values(xi)[0]
    gradients = space.element.gradients(xi)[0] @ B_inv[k]
    return values, gradients


def interpolate(space: FiniteElementSpace, f: Callable[[np.ndarray], np.ndarray]) -> DiscreteFunction:
    """Nodal interpolation; f takes an (n, d) array of points and returns n values"""
    try:
        values = np.asarray(f(space.dof_coords), dtype=float).reshape(space.num_dofs)
    except Exception as e:
        raise ValueError(f"Field evaluation failed on the Lagrange nodes: {e}") from e
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ValueError(f"Field is not finite at node {space.dof_coords[bad[0]].tolist()}")
    return DiscreteFunction(space, values)
