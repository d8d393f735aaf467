"""
Coefficient fields and the named problem catalog

Fields are small callable classes (rather than lambdas) so that problems can be shipped to
worker processes during parallel sweeps and table builds.
"""

import math
from typing import Sequence, TextIO

import numpy as np

from src.fem.assembly import ProblemSpec, zero_field
from src.fem.mesh import Mesh, locate_points
from src.utils.errors import MeshFormatError


class Constant:
    """Spatially constant scalar (shape ()) or vector (shape (d,)) field"""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        n = len(points)
        if self.value.ndim == 0:
            return np.full(n, float(self.value))
        return np.tile(self.value, (n, 1))

    def __repr__(self):
        return f"Constant({self.value.tolist()})"


class SinCosSource:
    """f(x, y) = sin(pi x) cos(pi y)"""

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.sin(np.pi * points[:, 0]) * np.cos(np.pi * points[:, 1])


class RotationalVelocity:
    """
    Rigid rotation about (0.5, 0.5): a = s * (-(y - 0.5), x - 0.5) with s = 2 outside the disc
    of radius 0.01 around the centre and s = 0.1 inside it.
    """

    def __init__(self, centre=(0.5, 0.5), radius: float = 0.01, outer: float = 2.0, inner: float = 0.1):
        self.centre = np.asarray(centre, dtype=float)
        self.radius = radius
        self.outer = outer
        self.inner = inner

    def __call__(self, points: np.ndarray) -> np.ndarray:
        dx = points[:, 0] - self.centre[0]
        dy = points[:, 1] - self.centre[1]
        scale = np.where(np.hypot(dx, dy) < self.radius, self.inner, self.outer)
        return np.column_stack([-scale * dy, scale * dx])


class NodalVectorField:
    """Vector field given at mesh nodes, interpolated linearly inside each element"""

    def __init__(self, mesh: Mesh, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != mesh.num_nodes:
            raise ValueError(f"Velocity has {values.shape[0]} nodal values but the mesh has {mesh.num_nodes} nodes")
        if values.shape[1] != mesh.dimension:
            raise ValueError(f"Velocity has {values.shape[1]} components, expected {mesh.dimension}")
        self.mesh = mesh
        self.values = values

    def __call__(self, points: np.ndarray) -> np.ndarray:
        elements, xi = locate_points(self.mesh, points)
        lam = np.column_stack([1.0 - xi.sum(axis=1), xi])
        nodal = self.values[self.mesh.elements[elements]]
        return np.einsum("nv,nvd->nd", lam, nodal)


class ManufacturedSolution:
    """u = sin(pi x) sin(pi y) (sin(pi x) in 1D) and the matching source for constant a, mu"""

    def __init__(self, velocity: Sequence[float], mu: float):
        self.velocity = np.asarray(velocity, dtype=float)
        self.mu = float(mu)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.prod(np.sin(np.pi * points), axis=1)

    def source(self, points: np.ndarray) -> np.ndarray:
        s = np.sin(np.pi * points)
        c = np.cos(np.pi * points)
        d = points.shape[1]
        advection = np.zeros(len(points))
        for i in range(d):
            others = np.prod(np.delete(s, i, axis=1), axis=1) if d > 1 else 1.0
            advection += self.velocity[i] * np.pi * c[:, i] * others
        return advection + d * np.pi ** 2 * self.mu * np.prod(s, axis=1)


class _Source:
    """Picklable bound reference to ManufacturedSolution.source"""

    def __init__(self, solution: ManufacturedSolution):
        self.solution = solution

    def __call__(self, points):
        return self.solution.source(points)


def angle_velocity(angle_index: int, magnitude: float) -> np.ndarray:
    """a = (k sqrt(2) cos(alpha), k sqrt(2) sin(alpha)) with alpha = n pi / 10"""
    alpha = angle_index * math.pi / 10.0
    return magnitude * math.sqrt(2.0) * np.array([math.cos(alpha), math.sin(alpha)])


def angle_sweep_problem(angle_index: int, magnitude: float, mu: float = 1.0) -> ProblemSpec:
    return ProblemSpec(velocity=Constant(angle_velocity(angle_index, magnitude)), diffusion=Constant(mu),
                       source=SinCosSource(), dirichlet_value=zero_field,
                       name=f"test1(n={angle_index},k={magnitude:g},mu={mu:g})")


def rotating_flow_problem(mu: float) -> ProblemSpec:
    return ProblemSpec(velocity=RotationalVelocity(), diffusion=Constant(mu), source=Constant(1.0),
                       dirichlet_value=zero_field, name=f"test2(mu={mu:g})")


def imported_problem(mesh: Mesh, velocity: np.ndarray, mu: float, source: float = 1.0) -> ProblemSpec:
    return ProblemSpec(velocity=NodalVectorField(mesh, velocity), diffusion=Constant(mu), source=Constant(source),
                       dirichlet_value=zero_field, name=f"imported(mu={mu:g})")


def constant_problem(velocity: Sequence[float], mu: float, source=None) -> ProblemSpec:
    """
    Constant-coefficient training problem: f = 1 in 1D, f = sin(pi x) cos(pi y) in 2D.
    """
    velocity = np.atleast_1d(np.asarray(velocity, dtype=float))
    if source is None:
        source = Constant(1.0) if velocity.size == 1 else SinCosSource()
    return ProblemSpec(velocity=Constant(velocity), diffusion=Constant(mu), source=source,
                       dirichlet_value=zero_field, name=f"constant(a={velocity.tolist()},mu={mu:g})")


def manufactured_problem(velocity: Sequence[float], mu: float):
    """Returns (problem, exact solution callable)"""
    solution = ManufacturedSolution(velocity, mu)
    problem = ProblemSpec(velocity=Constant(np.asarray(velocity, dtype=float)), diffusion=Constant(mu),
                          source=_Source(solution), dirichlet_value=zero_field, name=f"manufactured(mu={mu:g})")
    return problem, solution


def read_velocity(source: TextIO) -> np.ndarray:
    """
    Per-node velocity file: header `velocity <node_count> <d>`, then one line of d components per node.
    """
    rows = [(number, line.split()) for number, line in enumerate(source.read().splitlines(), start=1)
            if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise MeshFormatError("empty velocity file", 1)
    number, header = rows[0]
    if len(header) != 3 or header[0] != "velocity":
        raise MeshFormatError("expected header 'velocity <node_count> <d>'", number)
    try:
        count, dimension = int(header[1]), int(header[2])
    except ValueError:
        raise MeshFormatError("header counts must be integers", number)
    body = rows[1:]
    if len(body) != count:
        raise MeshFormatError(f"expected {count} velocity lines, found {len(body)}", number)
    values = np.empty((count, dimension))
    for i, (number, fields) in enumerate(body):
        if len(fields) != dimension:
            raise MeshFormatError(f"expected {dimension} components, found {len(fields)}", number)
        try:
            values[i] = [float(v) for v in fields]
        except ValueError:
            raise MeshFormatError("velocity components must be numbers", number)
    return values
