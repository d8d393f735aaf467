"""
Triangulations of the computational domain

Structured meshes of boxes and intervals, import/export of the line-oriented mesh
format, per-element geometry (diameter, measure, flow-aligned length), uniform
refinement and point location.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, TextIO, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.utils.errors import MeshFormatError, MeshValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StructuredGrid:
    """Construction parameters of a structured mesh, kept so it can be refined with nested nodes"""
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    cells: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Simplicial mesh in 1D (2-node elements) or 2D (triangles).

    nodes: (n, d) coordinates; elements: (m, d+1) vertex indices, positively oriented;
    boundary_nodes: sorted indices of nodes on the boundary.
    """
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    dimension: int
    grid: Optional[StructuredGrid] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    def affine_maps(self):
        """
        Affine maps x = v0 + B xi from the reference simplex.

        Returns (v0, B, det, B_inv) with shapes (m, d), (m, d, d), (m,), (m, d, d).
        """
        if "affine" not in self._cache:
            vertices = self.nodes[self.elements]
            v0 = vertices[:, 0, :]
            B = np.transpose(vertices[:, 1:, :] - v0[:, None, :], (0, 2, 1))
            det = np.linalg.det(B)
            B_inv = np.linalg.inv(B)
            self._cache["affine"] = (v0, B, det, B_inv)
        return self._cache["affine"]

    def measures(self) -> np.ndarray:
        """Element areas (lengths in 1D)"""
        _, _, det, _ = self.affine_maps()
        return np.abs(det) / (1.0 if self.dimension == 1 else 2.0)

    def diameters(self) -> np.ndarray:
        """Longest edge of every element"""
        vertices = self.nodes[self.elements]
        nv = vertices.shape[1]
        longest = np.zeros(self.num_elements)
        for i in range(nv):
            for j in range(i + 1, nv):
                longest = np.maximum(longest, np.linalg.norm(vertices[:, i] - vertices[:, j], axis=1))
        return longest

    def barycenters(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def edges(self):
        """
        Unique element edges (2D only).

        Returns (edges, element_edges, counts): sorted vertex pairs (ne, 2), the edge index of
        local edges (v0v1, v1v2, v2v0) per element (m, 3), and how many elements share each edge.
        """
        if "edges" not in self._cache:
            local = self.elements[:, [[0, 1], [1, 2], [2, 0]]]
            pairs = np.sort(local.reshape(-1, 2), axis=1)
            edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
            self._cache["edges"] = (edges, inverse.reshape(-1, 3), counts)
        return self._cache["edges"]

    def boundary_edges(self) -> np.ndarray:
        edges, _, counts = self.edges()
        return edges[counts == 1]


@dataclass(frozen=True)
class ElementGeometry:
    h_K: float
    area: float
    barycenter: np.ndarray
    vertex_coords: np.ndarray


def _make_mesh(nodes, elements, dimension, grid=None) -> Mesh:
    nodes = np.asarray(nodes, dtype=float).reshape(-1, dimension)
    elements = np.asarray(elements, dtype=np.int64).reshape(-1, dimension + 1)
    boundary = _boundary_nodes(elements, dimension)
    return Mesh(nodes=nodes, elements=elements, boundary_nodes=boundary, dimension=dimension, grid=grid)


def _boundary_nodes(elements: np.ndarray, dimension: int) -> np.ndarray:
    if dimension == 1:
        ids, counts = np.unique(elements.ravel(), return_counts=True)
        return ids[counts == 1]
    pairs = np.sort(elements[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
    edges, counts = np.unique(pairs, axis=0, return_counts=True)
    return np.unique(edges[counts == 1].ravel())


def build_structured(domain, nx: int, ny: int) -> Mesh:
    """
    Structured triangulation of the box domain = (x0, x1, y0, y1).

    Every cell is split into two right triangles by its lower-left to upper-right diagonal.
    Node (i, j) has index j * (nx + 1) + i.
    """
    x0, x1, y0, y1 = (float(v) for v in domain)
    if nx < 1 or ny < 1:
        raise ValueError(f"Cell counts must be positive, got nx={nx}, ny={ny}")
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"Box ({x0}, {x1}) x ({y0}, {y1}) has non-positive side lengths")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    p0 = (j * (nx + 1) + i).ravel()
    p1 = p0 + 1
    p2 = p0 + nx + 2
    p3 = p0 + nx + 1
    lower = np.column_stack([p0, p1, p2])
    upper = np.column_stack([p0, p2, p3])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)

    grid = StructuredGrid(lower=(x0, y0), upper=(x1, y1), cells=(nx, ny))
    return _make_mesh(nodes, elements, 2, grid)


def build_interval(domain, n: int) -> Mesh:
    """Uniform 1D mesh of the interval domain = (a, b) with n elements"""
    a, b = (float(v) for v in domain)
    if n < 1:
        raise ValueError(f"Element count must be positive, got {n}")
    if not b > a:
        raise ValueError(f"Interval ({a}, {b}) has non-positive length")
    nodes = np.linspace(a, b, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    grid = StructuredGrid(lower=(a,), upper=(b,), cells=(n,))
    return _make_mesh(nodes, elements, 1, grid)


def element_geometry(mesh: Mesh, k: int) -> ElementGeometry:
    if not 0 <= k < mesh.num_elements:
        raise IndexError(f"Element index {k} out of range for a mesh with {mesh.num_elements} elements")
    vertices = mesh.nodes[mesh.elements[k]]
    diameter = max(
        float(np.linalg.norm(vertices[i] - vertices[j]))
        for i in range(len(vertices)) for j in range(i + 1, len(vertices))
    )
    if mesh.dimension == 1:
        area = abs(float(vertices[1, 0] - vertices[0, 0]))
    else:
        (xa, ya), (xb, yb), (xc, yc) = vertices
        area = 0.5 * abs((xb - xa) * (yc - ya) - (xc - xa) * (yb - ya))
    return ElementGeometry(h_K=diameter, area=area, barycenter=vertices.mean(axis=0), vertex_coords=vertices.copy())


def h_flow(geom: ElementGeometry, a_bar) -> float:
    """
    Length of the chord through the barycenter along a_bar, clipped to the element.

    Falls back to the diameter h_K when a_bar vanishes.
    """
    vertices = np.asarray(geom.vertex_coords, dtype=float)
    direction = np.atleast_1d(np.asarray(a_bar, dtype=float))
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        return geom.h_K
    B = (vertices[1:] - vertices[0]).T
    grads = _barycentric_gradients(np.linalg.inv(B)[None])[0]
    return float(_clipped_chord(grads[None], (direction / norm)[None])[0])


def h_flow_all(mesh: Mesh, a_bar: np.ndarray) -> np.ndarray:
    """Vectorized h_flow for every element; a_bar has shape (m, d)"""
    a_bar = np.asarray(a_bar, dtype=float).reshape(mesh.num_elements, mesh.dimension)
    norms = np.linalg.norm(a_bar, axis=1)
    moving = norms > 0.0
    result = mesh.diameters()
    if np.any(moving):
        _, _, _, B_inv = mesh.affine_maps()
        grads = _barycentric_gradients(B_inv[moving])
        result[moving] = _clipped_chord(grads, a_bar[moving] / norms[moving, None])
    return result


def _barycentric_gradients(B_inv: np.ndarray) -> np.ndarray:
    """Physical gradients of the barycentric coordinates, shape (m, d+1, d)"""
    rest = B_inv
    first = -rest.sum(axis=1, keepdims=True)
    return np.concatenate([first, rest], axis=1)


def _clipped_chord(grads: np.ndarray, unit: np.ndarray) -> np.ndarray:
    # lambda_i(t) = c + t * g_i stays >= 0 on the chord, c = 1/(d+1) at the barycenter
    c = 1.0 / grads.shape[1]
    g = np.einsum("kid,kd->ki", grads, unit)
    with np.errstate(divide="ignore"):
        forward = np.where(g < 0.0, c / -g, np.inf).min(axis=1)
        backward = np.where(g > 0.0, c / g, np.inf).min(axis=1)
    return forward + backward


def import_mesh(source: TextIO) -> Mesh:
    """
    Read the line-oriented mesh format:

    mesh <dimension> <node_count> <element_count>
    <node_count lines of coordinates>
    <element_count lines of 1-based vertex indices>
    """
    lines = source.read().splitlines()
    cursor = 0

    def next_line():
        nonlocal cursor
        while cursor < len(lines):
            cursor += 1
            text = lines[cursor - 1].strip()
            if text and not text.startswith("#"):
                return cursor, text.split()
        raise MeshFormatError("unexpected end of file", cursor + 1)

    number, header = next_line()
    if len(header) != 4 or header[0] != "mesh":
        raise MeshFormatError("expected header 'mesh <dimension> <node_count> <element_count>'", number)
    try:
        dimension, node_count, element_count = (int(v) for v in header[1:])
    except ValueError:
        raise MeshFormatError("header counts must be integers", number)
    if dimension not in (1, 2):
        raise MeshFormatError(f"unsupported dimension {dimension}", number)
    if node_count < dimension + 1 or element_count < 1:
        raise MeshFormatError(f"invalid counts {node_count} nodes, {element_count} elements", number)

    nodes = np.empty((node_count, dimension))
    for i in range(node_count):
        number, fields = next_line()
        if len(fields) != dimension:
            raise MeshFormatError(f"node {i + 1}: expected {dimension} coordinates, found {len(fields)}", number)
        try:
            nodes[i] = [float(v) for v in fields]
        except ValueError:
            raise MeshFormatError(f"node {i + 1}: coordinates must be numbers", number)

    elements = np.empty((element_count, dimension + 1), dtype=np.int64)
    element_lines = []
    for k in range(element_count):
        number, fields = next_line()
        element_lines.append(number)
        if len(fields) != dimension + 1:
            raise MeshFormatError(f"element {k + 1}: expected {dimension + 1} vertex indices, found {len(fields)}", number)
        try:
            indices = [int(v) for v in fields]
        except ValueError:
            raise MeshFormatError(f"element {k + 1}: vertex indices must be integers", number)
        for index in indices:
            if not 1 <= index <= node_count:
                raise MeshFormatError(f"element {k + 1}: vertex index {index} out of range 1..{node_count}", number)
        if len(set(indices)) != len(indices):
            raise MeshValidationError(f"line {number}: element {k + 1} repeats a vertex index {indices}", element=k)
        elements[k] = np.asarray(indices) - 1

    elements = _orient(nodes, elements, element_lines)
    logger.debug("Imported mesh with %d nodes and %d elements", node_count, element_count)
    return _make_mesh(nodes, elements, dimension)


def _orient(nodes: np.ndarray, elements: np.ndarray, element_lines) -> np.ndarray:
    vertices = nodes[elements]
    if elements.shape[1] == 2:
        signed = vertices[:, 1, 0] - vertices[:, 0, 0]
        swap = (1, 0)
    else:
        e1 = vertices[:, 1] - vertices[:, 0]
        e2 = vertices[:, 2] - vertices[:, 0]
        signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        swap = (0, 2, 1)
    dimension = elements.shape[1] - 1
    longest = np.zeros(len(elements))
    for i in range(dimension + 1):
        for j in range(i + 1, dimension + 1):
            longest = np.maximum(longest, np.linalg.norm(vertices[:, i] - vertices[:, j], axis=1))
    degenerate = np.flatnonzero(np.abs(signed) <= 1e-12 * longest ** dimension)
    if degenerate.size:
        k = int(degenerate[0])
        raise MeshValidationError(f"line {element_lines[k]}: element {k + 1} is degenerate (zero measure)", element=k)
    flipped = signed < 0
    oriented = elements.copy()
    oriented[flipped] = elements[flipped][:, swap]
    return oriented


def export_mesh(mesh: Mesh, sink: TextIO):
    """Write `mesh` in the format read by import_mesh, with round-trip decimal coordinates"""
    sink.write(f"mesh {mesh.dimension} {mesh.num_nodes} {mesh.num_elements}\n")
    for point in mesh.nodes:
        sink.write(" ".join(repr(float(v)) for v in point) + "\n")
    for element in mesh.elements:
        sink.write(" ".join(str(int(v) + 1) for v in element) + "\n")


def refine(mesh: Mesh, factor: int) -> Mesh:
    """
    Nested refinement by `factor`.

    Structured meshes are rebuilt with factor times the cells per side; other meshes are
    split uniformly (triangles into four through edge midpoints), which needs a power of two.
    """
    if factor < 1:
        raise ValueError(f"Refinement factor must be positive, got {factor}")
    if factor == 1:
        return mesh
    if mesh.grid is not None:
        grid = mesh.grid
        if mesh.dimension == 1:
            return build_interval((grid.lower[0], grid.upper[0]), grid.cells[0] * factor)
        domain = (grid.lower[0], grid.upper[0], grid.lower[1], grid.upper[1])
        return build_structured(domain, grid.cells[0] * factor, grid.cells[1] * factor)
    if factor & (factor - 1):
        raise ValueError(f"Unstructured meshes refine by powers of two only, got {factor}")
    refined = mesh
    while factor > 1:
        refined = _split(refined)
        factor //= 2
    return refined


def _split(mesh: Mesh) -> Mesh:
    nv = mesh.num_nodes
    if mesh.dimension == 1:
        midpoints = mesh.nodes[mesh.elements].mean(axis=1)
        mid = nv + np.arange(mesh.num_elements)
        elements = np.column_stack([mesh.elements[:, 0], mid, mid, mesh.elements[:, 1]]).reshape(-1, 2)
        return _make_mesh(np.vstack([mesh.nodes, midpoints]), elements, 1)
    edges, element_edges, _ = mesh.edges()
    midpoints = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    m01, m12, m20 = (nv + element_edges[:, j] for j in range(3))
    v0, v1, v2 = (mesh.elements[:, j] for j in range(3))
    children = np.stack([
        np.column_stack([v0, m01, m20]),
        np.column_stack([m01, v1, m12]),
        np.column_stack([m20, m12, v2]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    return _make_mesh(np.vstack([mesh.nodes, midpoints]), children, 2)


def locate_points(mesh: Mesh, points: np.ndarray, tol: float = 1e-9):
    """
    Find the element containing each point.

    Returns (elements, xi): element indices (n,) and reference coordinates (n, d).
    Points outside the mesh by more than `tol` (in barycentric terms) raise ValueError.
    """
    points = np.asarray(points, dtype=float).reshape(-1, mesh.dimension)
    v0, _, _, B_inv = mesh.affine_maps()
    if "tree" not in mesh._cache:
        mesh._cache["tree"] = cKDTree(mesh.barycenters())
    tree = mesh._cache["tree"]

    k = min(12, mesh.num_elements)
    _, candidates = tree.query(points, k=k)
    candidates = np.asarray(candidates).reshape(len(points), k)
    best, xi, margin = _best_candidates(points, candidates, v0, B_inv)

    missing = np.flatnonzero(margin < -tol)
    if missing.size:
        logger.debug("Brute-force location for %d points", missing.size)
        all_elements = np.arange(mesh.num_elements)
        step = max(1, 2_000_000 // mesh.num_elements)
        for start in range(0, missing.size, step):
            chunk = missing[start:start + step]
            cand = np.broadcast_to(all_elements, (chunk.size, mesh.num_elements))
            b, x, mrg = _best_candidates(points[chunk], cand, v0, B_inv)
            best[chunk], xi[chunk], margin[chunk] = b, x, mrg
        outside = np.flatnonzero(margin < -tol)
        if outside.size:
            raise ValueError(f"Point {points[outside[0]].tolist()} lies outside the mesh")
    return best, xi


def _best_candidates(points, candidates, v0, B_inv):
    offsets = points[:, None, :] - v0[candidates]
    xi = np.einsum("nkab,nkb->nka", B_inv[candidates], offsets)
    lam0 = 1.0 - xi.sum(axis=2)
    margin = np.minimum(lam0, xi.min(axis=2))
    pick = np.argmax(margin, axis=1)
    rows = np.arange(len(points))
    return candidates[rows, pick], xi[rows, pick], margin[rows, pick]
