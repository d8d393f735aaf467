"""
Tabulated stabilization function phi(P_1, ..., P_d) and its online interpolation

Table file format (text, line oriented):

    stabtable 1
    dim <d> degree <l> kind <method>
    axis <i> pmax <P_i> count <M_i>
    axisref <i> <extra node> ...          (optional, low-Peclet nodes)
    <i_1> ... <i_d> <phi>                 (one line per node, row-major)
    # <key> = <value>                     (metadata)
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, TextIO, Tuple

import numpy as np

from src.utils.errors import TableFormatError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = "stabtable"


@dataclass(frozen=True)
class TableAxis:
    """Uniform nodes P_i * j / M_i, j = 0..M_i, merged with optional extra nodes inside the box"""
    pmax: float
    count: int
    refinement: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.pmax > 0:
            raise ValueError(f"Axis limit must be positive, got {self.pmax}")
        if self.count < 2:
            raise ValueError(f"Axis needs at least 2 intervals, got {self.count}")
        for node in self.refinement:
            if not 0 < node < self.pmax:
                raise ValueError(f"Refinement node {node} is outside (0, {self.pmax})")

    @property
    def spacing(self) -> float:
        return self.pmax / self.count

    @property
    def nodes(self) -> np.ndarray:
        uniform = self.pmax * np.arange(self.count + 1) / self.count
        return np.union1d(uniform, np.asarray(self.refinement, dtype=float))


@dataclass(eq=False)
class PhiTable:
    """
    phi at the nodes of a tensor grid over [0, P_1] x ... x [0, P_d].

    values has one axis per dimension, indexed like the node arrays of `axes`.
    """
    dimension: int
    degree: int
    kind: str
    axes: List[TableAxis]
    values: np.ndarray
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"Tables exist for dimension 1 or 2, got {self.dimension}")
        if len(self.axes) != self.dimension:
            raise ValueError(f"Expected {self.dimension} axes, got {len(self.axes)}")
        self.values = np.asarray(self.values, dtype=float).reshape(self.shape)
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("Table values must be finite and non-negative")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(axis.nodes) for axis in self.axes)

    @property
    def box(self) -> np.ndarray:
        return np.array([axis.pmax for axis in self.axes])

    def node_indices(self):
        """All node index tuples in row-major order"""
        return list(itertools.product(*(range(n) for n in self.shape)))

    def node_peclet(self, index: Sequence[int]) -> np.ndarray:
        return np.array([axis.nodes[i] for axis, i in zip(self.axes, index)])

    def along_axis(self, axis: int) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes and values along one axis with the other coordinates at zero"""
        selector = [0] * self.dimension
        selector[axis] = slice(None)
        return self.axes[axis].nodes, self.values[tuple(selector)]

    def interpolate(self, peclet) -> np.ndarray:
        return interpolate_phi(self, peclet)

    def __eq__(self, other):
        if not isinstance(other, PhiTable):
            return NotImplemented
        return (self.dimension == other.dimension and self.degree == other.degree and self.kind == other.kind
                and self.axes == other.axes and self.metadata == other.metadata
                and np.array_equal(self.values, other.values))


def _stencil(nodes: np.ndarray, p: np.ndarray):
    """Start index and quadratic Lagrange weights of the 3-node stencil for each query"""
    n = len(nodes)
    cell = np.clip(np.searchsorted(nodes, p, side="right") - 1, 0, n - 2)
    start = np.clip(cell, 0, n - 3)
    x0, x1, x2 = nodes[start], nodes[start + 1], nodes[start + 2]
    weights = np.column_stack([
        (p - x1) * (p - x2) / ((x0 - x1) * (x0 - x2)),
        (p - x0) * (p - x2) / ((x1 - x0) * (x1 - x2)),
        (p - x0) * (p - x1) / ((x2 - x0) * (x2 - x1)),
    ])
    return start, weights


def interpolate_phi(table: PhiTable, peclet) -> np.ndarray:
    """
    Second order interpolation of phi at non-negative Peclet vectors.

    peclet: (d,) or (n, d). Queries outside the box are clamped to it. The stencil of a query
    is the cell containing it plus the next node, shifted inward at the upper edge.
    """
    peclet = np.asarray(peclet, dtype=float)
    single = peclet.ndim == 1
    peclet = np.atleast_2d(peclet)
    if peclet.shape[1] != table.dimension:
        raise ValueError(f"Expected {table.dimension} Peclet components, got {peclet.shape[1]}")
    if np.any(peclet < 0):
        raise ValueError("Peclet components must be non-negative; take absolute values first")
    clamped = np.minimum(peclet, table.box)
    outside = int(np.count_nonzero(np.any(peclet > table.box, axis=1)))
    if outside:
        logger.warning("Clamped %d Peclet queries to the table box %s", outside, table.box.tolist())

    stencils = [_stencil(axis.nodes, clamped[:, i]) for i, axis in enumerate(table.axes)]
    n = len(clamped)
    result = np.zeros(n)
    for offsets in itertools.product(range(3), repeat=table.dimension):
        weight = np.ones(n)
        index = []
        for (start, weights), offset in zip(stencils, offsets):
            weight = weight * weights[:, offset]
            index.append(start + offset)
        result += weight * table.values[tuple(index)]
    return result[0] if single else result


def monotone_violations(table: PhiTable, tolerance: float = 0.0) -> List[str]:
    """Axes along which phi decreases (other coordinates at zero)"""
    problems = []
    for axis in range(table.dimension):
        nodes, values = table.along_axis(axis)
        drops = np.flatnonzero(np.diff(values) < -tolerance * np.maximum(values[:-1], 1e-300))
        if drops.size:
            problems.append(f"axis {axis} decreases after P={nodes[drops[0]]:g}")
    return problems


def extrapolate_origin(nodes: np.ndarray, values: np.ndarray) -> float:
    """
    One-sided polynomial extrapolation to P = 0 from up to three nearest positive nodes,
    clamped at zero.
    """
    count = min(3, len(nodes) - 1)
    x = nodes[1:1 + count]
    y = values[1:1 + count]
    estimate = 0.0
    for j in range(count):
        basis = 1.0
        for k in range(count):
            if k != j:
                basis *= (0.0 - x[k]) / (x[j] - x[k])
        estimate += basis * y[j]
    return max(0.0, float(estimate))


def save_table(table: PhiTable, sink: TextIO):
    sink.write(f"{MAGIC} {FORMAT_VERSION}\n")
    sink.write(f"dim {table.dimension} degree {table.degree} kind {table.kind}\n")
    for i, axis in enumerate(table.axes):
        sink.write(f"axis {i} pmax {axis.pmax!r} count {axis.count}\n")
        if axis.refinement:
            sink.write(f"axisref {i} " + " ".join(repr(float(v)) for v in axis.refinement) + "\n")
    for index in table.node_indices():
        sink.write(" ".join(str(i) for i in index) + f" {float(table.values[index])!r}\n")
    for key in sorted(table.metadata):
        sink.write(f"# {key} = {table.metadata[key]}\n")


def load_table(source: TextIO) -> PhiTable:
    lines = source.read().splitlines()
    metadata = {}
    body = []
    for number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].partition("=")
            if sep:
                metadata[key.strip()] = value.strip()
            continue
        body.append((number, stripped.split()))

    if not body or body[0][1][:1] != [MAGIC]:
        raise TableFormatError(f"Not a stabilization table: expected '{MAGIC} {FORMAT_VERSION}' header")
    header = body[0][1]
    if len(header) != 2 or header[1] != str(FORMAT_VERSION):
        raise TableFormatError(f"Unsupported table version {' '.join(header[1:])}, expected {FORMAT_VERSION}")
    if len(body) < 2:
        raise TableFormatError("Missing 'dim' line")
    dimension, degree, kind = _parse_description(*body[1])

    axes_spec = {}
    refinements = {}
    position = 2
    while position < len(body) and body[position][1][0] in ("axis", "axisref"):
        number, fields = body[position]
        try:
            if fields[0] == "axis":
                if len(fields) != 6 or fields[2] != "pmax" or fields[4] != "count":
                    raise ValueError("expected 'axis <i> pmax <P> count <M>'")
                axes_spec[int(fields[1])] = (float(fields[3]), int(fields[5]))
            else:
                refinements[int(fields[1])] = tuple(float(v) for v in fields[2:])
        except ValueError as e:
            raise TableFormatError(f"line {number}: {e}")
        position += 1
    if sorted(axes_spec) != list(range(dimension)):
        raise TableFormatError(f"Expected axis lines 0..{dimension - 1}, found {sorted(axes_spec)}")
    try:
        axes = [TableAxis(pmax, count, refinements.get(i, ())) for i, (pmax, count) in sorted(axes_spec.items())]
    except ValueError as e:
        raise TableFormatError(str(e))

    shape = tuple(len(axis.nodes) for axis in axes)
    expected = int(np.prod(shape))
    nodes = body[position:]
    if len(nodes) != expected:
        raise TableFormatError(f"Node count mismatch: expected {expected}, found {len(nodes)}")
    values = np.empty(shape)
    seen = np.zeros(shape, dtype=bool)
    for number, fields in nodes:
        if len(fields) != dimension + 1:
            raise TableFormatError(f"line {number}: expected {dimension} indices and a value")
        try:
            index = tuple(int(v) for v in fields[:dimension])
            value = float(fields[-1])
        except ValueError:
            raise TableFormatError(f"line {number}: malformed node line")
        if any(not 0 <= i < n for i, n in zip(index, shape)):
            raise TableFormatError(f"line {number}: node index {index} outside grid {shape}")
        if not np.isfinite(value) or value < 0:
            raise TableFormatError(f"line {number}: phi={value} must be finite and non-negative")
        values[index] = value
        seen[index] = True
    if not seen.all():
        raise TableFormatError(f"Node {tuple(np.argwhere(~seen)[0])} is missing")
    return PhiTable(dimension=dimension, degree=degree, kind=kind, axes=axes, values=values, metadata=metadata)


def _parse_description(number: int, fields: List[str]):
    if len(fields) != 6 or fields[0] != "dim" or fields[2] != "degree" or fields[4] != "kind":
        raise TableFormatError(f"line {number}: expected 'dim <d> degree <l> kind <method>'")
    try:
        dimension, degree = int(fields[1]), int(fields[3])
    except ValueError:
        raise TableFormatError(f"line {number}: dimension and degree must be integers")
    if dimension not in (1, 2) or degree not in (1, 2, 3):
        raise TableFormatError(f"line {number}: unsupported dim {dimension} / degree {degree}")
    return dimension, degree, fields[5]


def read_table(path: str) -> PhiTable:
    with open(path) as handle:
        return load_table(handle)
