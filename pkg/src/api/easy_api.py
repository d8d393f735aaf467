"""
Easy API module for the stabilized advection-diffusion solver

This module provides simplified functions for the common workflows: single stabilized solves,
offline table builds, benchmark suites and the calibration ledger, without dealing with
spaces, assembly, database sessions or file formats directly.
"""

import logging
import os
import sys
from contextlib import contextmanager
from typing import Any, Dict, List, Optional, Sequence

# Add parent directory to path to import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(__file__))))

import config
from src.database.connection import get_db, init_db, session_for
from src.fem.assembly import ProblemSpec, StabilizationMethod, solve_stabilized
from src.fem.fe_space import DiscreteFunction, FiniteElementSpace, build_space
from src.fem.fields import angle_sweep_problem, imported_problem, read_velocity, rotating_flow_problem
from src.fem.mesh import Mesh, build_structured, import_mesh
from src.services.benchmark_service import (CSV_HEADER, ErrorReport, SuiteResult, TEST2_DOMAIN, convergence_study,
                                            error_norms, run_test1, run_test2, run_unstructured, sweep_for)
from src.services.calibration_service import calibrate_peclet, reference_solution
from src.services.ledger_service import LedgerService
from src.services.table_service import LOG_HEADER, TableBuildSpec, build_table
from src.stabilization.phi_table import PhiTable, read_table, save_table
from src.stabilization.tau_formulas import (ANALYTIC_FORMULAS, TauFormula, compute_tau, element_flow_data,
                                            peclet_number)
from src.utils.errors import ConfigError
from src.utils.files import RunConfig, atomic_write, write_csv

logger = logging.getLogger(__name__)

PROBLEMS = ("test1", "test2", "imported")

SOLVE_SCHEMA = {
    "problem": {"name": str, "degree": int, "cells": int, "angle": int, "magnitude": float, "mu": float,
                "mesh": str, "velocity": str},
    "stabilization": {"formula": str, "method": str, "table": str},
    "reference": {"fine_factor": int, "formula": str},
    "output": {"solution": str, "errors": str, "tau_map": str},
}


def setup_database():
    """
    Initialize the ledger database with all required tables.
    Call this once when setting up the application.
    """
    init_db()
    return True


@contextmanager
def get_session(db_url: str = None):
    """
    Context manager for ledger sessions.
    Automatically handles session creation and cleanup.

    Usage:
    with get_session() as session:
        # use session here
    """
    db = session_for(db_url) if db_url else next(get_db())
    try:
        yield db
    finally:
        db.close()


class ProblemData:
    """Class describing one catalog problem: which test, which mesh and which coefficients"""
    def __init__(self, name: str = "test1", degree: int = 1, cells: int = 40, angle: int = 0,
                 magnitude: float = 1600.0, mu: float = 1.0, mesh: str = None, velocity: str = None):
        if name not in PROBLEMS:
            raise ConfigError(f"Unknown problem '{name}', expected one of {PROBLEMS}")
        if name == "imported" and not (mesh and velocity):
            raise ConfigError("Imported problems need both a mesh and a velocity file")
        self.name = name
        self.degree = degree
        self.cells = cells
        self.angle = angle
        self.magnitude = magnitude
        self.mu = mu
        self.mesh = mesh
        self.velocity = velocity

    def to_dict(self) -> Dict[str, Any]:
        """Convert problem data to a dictionary (config file layout)"""
        return {
            'name': self.name,
            'degree': self.degree,
            'cells': self.cells,
            'angle': self.angle,
            'magnitude': self.magnitude,
            'mu': self.mu,
            'mesh': self.mesh,
            'velocity': self.velocity
        }

    @classmethod
    def from_config(cls, run_config: RunConfig):
        """Create a ProblemData object from the [problem] section of a run configuration"""
        values = {key: value for key, value in run_config.values.get("problem", {}).items() if value is not None}
        return cls(**values)

    def build(self):
        """Mesh and ProblemSpec of this catalog entry"""
        if self.name == "test1":
            mesh = build_structured((0.0, 1.0, 0.0, 1.0), self.cells, self.cells)
            return mesh, angle_sweep_problem(self.angle, self.magnitude, self.mu)
        if self.name == "test2":
            mesh = build_structured(TEST2_DOMAIN, self.cells, max(1, self.cells // 2))
            return mesh, rotating_flow_problem(self.mu)
        mesh = load_mesh(self.mesh)
        with open(self.velocity) as handle:
            velocity = read_velocity(handle)
        return mesh, imported_problem(mesh, velocity, self.mu)

    def __str__(self) -> str:
        return f"Problem: {self.name} (P{self.degree}, mu={self.mu:g})"


# ========== FILE FUNCTIONS ==========

def load_mesh(path: str) -> Mesh:
    with open(path) as handle:
        return import_mesh(handle)


def load_phi_table(path: str) -> PhiTable:
    """
    Read a stabilization table file.

    Raises:
        TableFormatError: If the file is malformed or inconsistent
    """
    return read_table(path)


def write_phi_table(table: PhiTable, path: str):
    with atomic_write(path) as handle:
        save_table(table, handle)


def write_solution(solution: DiscreteFunction, path: str):
    """Solution values in DOF order with the Lagrange node coordinates"""
    coords = solution.space.dof_coords
    names = ["x", "y"][:coords.shape[1]]
    rows = [(i, *map(float, coords[i]), float(v)) for i, v in enumerate(solution.values)]
    write_csv(path, ["dof", *names, "value"], rows)


# ========== SOLVE FUNCTIONS ==========

def tau_map(space: FiniteElementSpace, problem: ProblemSpec, formula, table: PhiTable = None) -> List[Dict[str, Any]]:
    """
    Per-element coefficients of a formula.

    Returns:
        List of dictionaries with element index, barycenter coordinates and tau
    """
    return tau_rows(space.mesh, compute_tau(formula, element_flow_data(space, problem), table))


def tau_rows(mesh: Mesh, tau) -> List[Dict[str, Any]]:
    centres = mesh.barycenters()
    return [
        {
            'element': k,
            'x': float(centres[k, 0]),
            'y': float(centres[k, 1]) if centres.shape[1] > 1 else 0.0,
            'tau': float(tau[k])
        }
        for k in range(mesh.num_elements)
    ]


def write_tau_map(rows: List[Dict[str, Any]], path: str):
    write_csv(path, ["element", "x", "y", "tau"], [(r['element'], r['x'], r['y'], r['tau']) for r in rows])


def solve_problem(problem_data: ProblemData, formula="codina", table_path: str = None, method: str = "tbt",
                  fine_factor: int = None, reference_formula: str = None) -> Dict[str, Any]:
    """
    Solve one catalog problem with a stabilization coefficient formula.

    Args:
        problem_data: Problem description
        formula: Coefficient formula name or label (e.g. "codina", "LS")
        table_path: Table file, needed by the least-squares formulas
        method: Stabilization method name ("tbt", "supg", "ls", "adjoint")
        fine_factor: When given, also solve a reference on a refined mesh and report errors

    Returns:
        Dictionary with the solution, coefficients, Peclet range and optional ErrorReport

    Raises:
        ValueError: If a table-backed formula is requested without a table
    """
    formula = TauFormula.parse(formula)
    if formula.needs_table and not table_path:
        raise ConfigError(f"Formula '{formula.value}' needs a stabilization table (--table)")
    table = load_phi_table(table_path) if table_path else None
    stabilization = StabilizationMethod.from_name(method)

    mesh, problem = problem_data.build()
    space = build_space(mesh, problem_data.degree)
    data = element_flow_data(space, problem)
    tau = compute_tau(formula, data, table)
    solution = solve_stabilized(space, problem, stabilization, tau)
    peclet = peclet_number(data)

    report: Optional[ErrorReport] = None
    if fine_factor:
        reference = reference_solution(problem, mesh, problem_data.degree, fine_factor,
                                       TauFormula.parse(reference_formula) if reference_formula else None, stabilization)
        report = error_norms(solution, reference)
        report.formula = formula.label
        report.peclet = f"{float(peclet.min()):.6g}..{float(peclet.max()):.6g}"

    return {
        'solution': solution,
        'tau': tau,
        'formula': formula.label,
        'peclet': (float(peclet.min()), float(peclet.max())),
        'errors': report
    }


def solve_from_config(path: str, formula: str = None, table_path: str = None) -> Dict[str, Any]:
    """
    Run a solve described by a config file; command-line values override the file.
    Output files named in the [output] section are written.
    """
    run_config = RunConfig.from_file(path, SOLVE_SCHEMA)
    if formula:
        run_config.set("stabilization", "formula", formula)
    if table_path:
        run_config.set("stabilization", "table", table_path)
    run_config.check_paths([("problem", "mesh"), ("problem", "velocity"), ("stabilization", "table")])

    problem_data = ProblemData.from_config(run_config)
    outcome = solve_problem(
        problem_data,
        formula=run_config.get("stabilization", "formula", "codina"),
        table_path=run_config.get("stabilization", "table"),
        method=run_config.get("stabilization", "method", "tbt"),
        fine_factor=run_config.get("reference", "fine_factor"),
        reference_formula=run_config.get("reference", "formula")
    )

    solution_path = run_config.get("output", "solution")
    if solution_path:
        write_solution(outcome['solution'], solution_path)
    errors_path = run_config.get("output", "errors")
    if errors_path and outcome['errors'] is not None:
        report = outcome['errors']
        write_csv(errors_path, CSV_HEADER,
                  [(report.formula, problem_data.degree, problem_data.name, report.peclet, "", report.l2, report.linf)])
    map_path = run_config.get("output", "tau_map")
    if map_path:
        write_tau_map(tau_rows(outcome['solution'].space.mesh, outcome['tau']), map_path)
    return outcome


# ========== TABLE FUNCTIONS ==========

def build_phi_table(spec: TableBuildSpec, out: str, log_path: str = None, db_url: str = None) -> PhiTable:
    """
    Build a table offline and write it atomically.

    Args:
        spec: Grid and calibration settings
        out: Table file path
        log_path: Optional per-node build log CSV (kept even when a node fails)
        db_url: Optional ledger URL recording every node calibration

    Returns:
        The built PhiTable
    """
    log: List[tuple] = []
    try:
        if db_url:
            with get_session(db_url) as session:
                table = build_table(spec, ledger=LedgerService(session), log=log)
        else:
            table = build_table(spec, log=log)
    finally:
        if log_path:
            write_csv(log_path, LOG_HEADER, log)
    write_phi_table(table, out)
    return table


def describe_table(table: PhiTable) -> List[str]:
    """Human-readable summary: axes, metadata and phi along each axis"""
    lines = [f"dimension {table.dimension}, degree {table.degree}, kind {table.kind}, nodes {table.shape}"]
    for i, axis in enumerate(table.axes):
        lines.append(f"axis {i}: pmax {axis.pmax:g}, {axis.count} intervals, {len(axis.refinement)} extra nodes")
    for key in sorted(table.metadata):
        lines.append(f"{key}: {table.metadata[key]}")
    for i in range(table.dimension):
        nodes, values = table.along_axis(i)
        lines.append(f"phi along axis {i}:")
        lines.extend(f"  {p:12.6g}  {v:.8e}" for p, v in zip(nodes, values))
    return lines


def calibrate(peclet: Sequence[float], degree: int = 1, method: str = "tbt", record: bool = False) -> Dict[str, Any]:
    """
    Calibrate phi at one Peclet vector, optionally storing the run in the ledger.
    """
    result = calibrate_peclet(peclet, degree, StabilizationMethod.from_name(method))
    if record:
        with get_session() as session:
            LedgerService(session).record_calibration(result, peclet, method, degree, replace=True)
    return {
        'peclet': list(peclet),
        'tau': result.tau_opt,
        'phi': result.phi,
        'J': result.J_min,
        'iterations': result.iterations,
        'boundary_hit': result.boundary_hit
    }


def get_calibration_history(kind: str = "tbt", degree: int = 1) -> List[Dict[str, Any]]:
    """
    Calibration runs stored in the ledger for one method and degree.
    """
    with get_session() as session:
        runs = LedgerService(session).get_runs(kind=kind, degree=degree)
        return [
            {
                'peclet': run.peclet,
                'tau': run.tau_opt,
                'phi': run.phi,
                'J': run.j_min,
                'converged': run.converged,
                'created_at': run.created_at
            }
            for run in runs
        ]


# ========== BENCHMARK FUNCTIONS ==========

def run_benchmark(suite: str, scale: str = "desk", degree: int = 1, formulas: Sequence = None,
                  table_path: str = None, jobs: int = 1, method: str = "tbt", mesh_path: str = None,
                  velocity_path: str = None, viscosities: Sequence[float] = None, out: str = None,
                  record: bool = False):
    """
    Run one benchmark suite and optionally write its CSV and store it in the ledger.

    Returns:
        SuiteResult for test1/test2/unstructured, ConvergenceResult for convergence
    """
    if suite == "convergence":
        cells = config.DESK_SCALE["convergence"]["cells"]
        result = convergence_study(degree, cells)
        if out:
            write_csv(out, ["degree", "mode", "cells", "h", "l2"], result.rows(),
                      comments=[f"slope = {result.slope:.4f}"])
        return result

    table = load_phi_table(table_path) if table_path else None
    if formulas is None:
        formulas = list(ANALYTIC_FORMULAS)
        if table is not None:
            formulas += [TauFormula.LEAST_SQUARES, TauFormula.LEAST_SQUARES_FLOW]

    if suite in ("test1", "test2"):
        spec = sweep_for(suite, scale, degree, formulas, jobs, method)
        result: SuiteResult = run_test1(spec, table) if suite == "test1" else run_test2(spec, table)
    elif suite == "unstructured":
        if not (mesh_path and velocity_path):
            raise ConfigError("The unstructured suite needs --mesh and --velocity files")
        mesh = load_mesh(mesh_path)
        with open(velocity_path) as handle:
            velocity = read_velocity(handle)
        result = run_unstructured(mesh, velocity, viscosities or config.TEST3_VISCOSITIES, formulas, degree,
                                  table, method=method, jobs=jobs)
    else:
        raise ConfigError(f"Unknown suite '{suite}'")

    if out:
        result.write(out)
    if record:
        with get_session() as session:
            LedgerService(session).record_benchmark(result.rows + result.means(), suite)
    return result
