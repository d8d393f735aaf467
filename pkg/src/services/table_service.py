"""
Offline construction of phi tables: one calibration per Peclet grid node
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

import config
from src.fem.assembly import StabilizationMethod
from src.fem.quadrature import PURPOSES, quadrature_order
from src.services.calibration_service import calibrate_peclet, default_reference_formula
from src.stabilization.phi_table import PhiTable, TableAxis, extrapolate_origin, monotone_violations
from src.stabilization.tau_formulas import TauFormula
from src.utils.errors import CalibrationError, StabFemError

logger = logging.getLogger(__name__)

LOG_HEADER = ("node", "peclet", "tau", "phi", "J", "iterations", "boundary_hit", "status")


@dataclass
class TableBuildSpec:
    """Grid box, node counts and calibration defaults of one table build"""
    dimension: int = 2
    degree: int = 1
    kind: str = "tbt"
    pmax: float = config.TABLE_PMAX
    nodes: int = config.TABLE_NODES
    refinement: Tuple[float, ...] = config.TABLE_REFINE_NODES
    jobs: int = 1
    skip_failed: bool = False
    cells: Optional[int] = None
    fine_factor: Optional[int] = None
    reference_formula: Optional[str] = None

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"Tables are built in dimension 1 or 2, got {self.dimension}")
        if self.degree not in (1, 2, 3):
            raise ValueError(f"Unsupported Lagrange degree {self.degree}")
        if not self.pmax > 0:
            raise ValueError(f"Box limit must be positive, got {self.pmax}")
        if self.nodes < 2:
            raise ValueError(f"Each axis needs at least 2 intervals, got {self.nodes}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be at least 1, got {self.jobs}")
        StabilizationMethod.from_name(self.kind)
        self.refinement = tuple(sorted(float(p) for p in self.refinement if 0 < p < self.pmax))

    @property
    def cells_used(self) -> int:
        return self.cells or config.TRAINING_CELLS[self.degree]

    @property
    def fine_factor_used(self) -> int:
        return self.fine_factor or config.TABLE_FINE_FACTORS[self.degree]

    @property
    def reference_used(self) -> TauFormula:
        if self.reference_formula:
            return TauFormula.parse(self.reference_formula)
        return default_reference_formula(self.dimension)

    def axes(self) -> List[TableAxis]:
        return [TableAxis(float(self.pmax), self.nodes, self.refinement) for _ in range(self.dimension)]


@dataclass
class NodeOutcome:
    index: Tuple[int, ...]
    peclet: Tuple[float, ...]
    result: Optional[object] = None
    error: Optional[str] = None


def _calibrate_node(task) -> NodeOutcome:
    """Top-level worker so it can run in a process pool"""
    index, peclet, degree, kind, cells, fine_factor, reference = task
    try:
        result = calibrate_peclet(peclet, degree, StabilizationMethod.from_name(kind), cells=cells,
                                  fine_factor=fine_factor, reference_formula=TauFormula(reference))
        return NodeOutcome(index, peclet, result=result)
    except (StabFemError, ValueError, ArithmeticError) as e:
        return NodeOutcome(index, peclet, error=f"{type(e).__name__}: {e}")


def _nearest_filled(values: np.ndarray, filled: np.ndarray, index) -> float:
    candidates = np.argwhere(filled)
    distance = np.abs(candidates - np.asarray(index)).sum(axis=1)
    return float(values[tuple(candidates[np.argmin(distance)])])


def build_table(spec: TableBuildSpec, ledger=None, log: list = None) -> PhiTable:
    """
    Calibrate phi on every grid node except the origin and assemble the table.

    ledger: optional LedgerService recording every node calibration.
    log: optional list receiving one row per node (LOG_HEADER layout).
    """
    axes = spec.axes()
    grid = [axis.nodes for axis in axes]
    shape = tuple(len(nodes) for nodes in grid)
    origin = (0,) * spec.dimension
    reference = spec.reference_used
    tasks = []
    for index in np.ndindex(*shape):
        if index == origin:
            continue
        peclet = tuple(float(grid[i][j]) for i, j in enumerate(index))
        tasks.append((index, peclet, spec.degree, spec.kind, spec.cells_used, spec.fine_factor_used, reference.value))

    logger.info("Building %dD P%d %s table: %d calibrations on %d worker(s)", spec.dimension, spec.degree,
                spec.kind, len(tasks), spec.jobs)
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            outcomes = list(pool.map(_calibrate_node, tasks, chunksize=1))
    else:
        outcomes = [_calibrate_node(task) for task in tasks]

    values = np.zeros(shape)
    filled = np.zeros(shape, dtype=bool)
    failed = []
    boundary = []
    for outcome in outcomes:
        if outcome.error is not None:
            if log is not None:
                log.append((" ".join(map(str, outcome.index)), " ".join(map(repr, outcome.peclet)),
                            "", "", "", "", "", outcome.error))
            if not spec.skip_failed:
                raise CalibrationError(f"Calibration failed at node {outcome.index} (P={list(outcome.peclet)}): "
                                       f"{outcome.error}", node=outcome.index)
            logger.warning("Skipping failed node %s: %s", outcome.index, outcome.error)
            failed.append(outcome.index)
            continue
        result = outcome.result
        values[outcome.index] = result.phi
        filled[outcome.index] = True
        if result.boundary_hit:
            boundary.append(outcome.index)
        if log is not None:
            log.append((" ".join(map(str, outcome.index)), " ".join(map(repr, outcome.peclet)), result.tau_opt,
                        result.phi, result.J_min, result.iterations, result.boundary_hit,
                        "ok" if result.converged else "not converged"))
        if ledger is not None:
            ledger.record_calibration(result, outcome.peclet, spec.kind, spec.degree, replace=True)

    if not filled.any():
        raise CalibrationError("Every node calibration failed")
    for index in failed:
        values[index] = _nearest_filled(values, filled, index)

    estimates = []
    for axis in range(spec.dimension):
        selector = [0] * spec.dimension
        selector[axis] = slice(None)
        estimates.append(extrapolate_origin(grid[axis], values[tuple(selector)]))
    values[origin] = float(np.mean(estimates))

    metadata = {
        "extrapolated_origin": "true",
        "training_cells": str(spec.cells_used),
        "fine_factor": str(spec.fine_factor_used),
        "reference": reference.value,
        "interpolation": "tensor quadratic, 3-node stencil per axis",
        "quadrature": ", ".join(f"{purpose}={quadrature_order(spec.degree, purpose)}" for purpose in PURPOSES),
    }
    if failed:
        metadata["failed_nodes"] = "; ".join(" ".join(map(str, index)) for index in failed)
    if boundary:
        metadata["boundary_nodes"] = "; ".join(" ".join(map(str, index)) for index in boundary)

    table = PhiTable(dimension=spec.dimension, degree=spec.degree, kind=spec.kind, axes=axes, values=values,
                     metadata=metadata)
    if spec.kind == "tbt":
        problems = monotone_violations(table)
        if problems:
            logger.warning("Table is not monotone: %s", "; ".join(problems))
            table.metadata["monotonicity"] = "warning: " + "; ".join(problems)
    return table
