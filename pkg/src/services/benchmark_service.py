"""
Error metrics and benchmark sweeps comparing stabilization coefficient formulas

Every sweep point is solved once per formula against one shared reference solution on a
nested fine mesh. Errors are measured against the Lagrange interpolant of the reference:
L2 by quadrature, Linf at the coarse Lagrange nodes.
"""

import logging
import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

import config
from src.fem.assembly import ProblemSpec, StabilizationMethod, assemble_mass, solve_stabilized
from src.fem.fe_space import DiscreteFunction, build_space, interpolate
from src.fem.fields import (angle_sweep_problem, imported_problem, manufactured_problem,
                            rotating_flow_problem)
from src.fem.mesh import Mesh, build_structured
from src.fem.quadrature import quadrature_for
from src.services.calibration_service import reference_solution
from src.stabilization.tau_formulas import (ANALYTIC_FORMULAS, TauFormula, compute_tau, element_flow_data,
                                            peclet_number)
from src.utils.files import write_csv

logger = logging.getLogger(__name__)

CSV_HEADER = ("formula", "degree", "test", "param1", "param2", "l2", "linf")
MEAN = "MEAN"
TEST2_DOMAIN = (0.0, 1.0, 0.0, 0.5)
SCALES = ("desk", "full")


@dataclass
class ErrorReport:
    l2: float
    linf: float
    formula: str = ""
    peclet: str = ""
    mesh: str = ""
    degree: int = 0


@dataclass
class ErrorRow:
    """One CSV row; pe_raw uses h_K, pe_scaled uses h_K / l"""
    formula: str
    degree: int
    test: str
    param1: str
    param2: Optional[str]
    l2: float
    linf: float
    pe_raw: float = float("nan")
    pe_scaled: float = float("nan")

    def as_csv(self):
        return (self.formula, self.degree, self.test, self.param1, "" if self.param2 is None else self.param2,
                self.l2, self.linf)


@dataclass
class SweepSpec:
    """Sweep lists of one suite; cells is the coarse mesh resolution (cells per unit length)"""
    degree: int = 1
    cells: int = 40
    fine_factor: int = 6
    angles: List[int] = field(default_factory=lambda: list(config.TEST1_ANGLES))
    magnitudes: List[float] = field(default_factory=lambda: list(config.DESK_SCALE["test1"]["magnitudes"]))
    viscosities: List[float] = field(default_factory=lambda: list(config.TEST2_VISCOSITIES))
    formulas: List[TauFormula] = field(default_factory=lambda: list(ANALYTIC_FORMULAS))
    mu: float = 1.0
    method: str = "tbt"
    jobs: int = 1

    def __post_init__(self):
        self.formulas = [TauFormula.parse(f) for f in self.formulas]
        for name in ("angles", "magnitudes", "viscosities", "formulas"):
            if not getattr(self, name):
                raise ValueError(f"Sweep list '{name}' is empty")
        if self.cells < 1 or self.fine_factor < 1 or self.jobs < 1:
            raise ValueError("cells, fine_factor and jobs must be positive")
        StabilizationMethod.from_name(self.method)


@dataclass
class SuiteResult:
    suite: str
    degree: int
    rows: List[ErrorRow]
    metadata: Dict[str, str] = field(default_factory=dict)

    def means(self) -> List[ErrorRow]:
        return aggregate_means(self.rows, self.suite, self.degree, per_param1=self.suite == "test1")

    def overall(self) -> Dict[str, ErrorRow]:
        return OrderedDict((row.formula, row) for row in self.means() if row.param1 == MEAN)

    def csv_rows(self):
        return [row.as_csv() for row in self.rows + self.means()]

    def summary(self) -> List[str]:
        return [f"{formula:>6}  P{self.degree}  mean L2 {row.l2:.6e}  mean Linf {row.linf:.6e}"
                for formula, row in self.overall().items()]

    def pe_range(self):
        raw = [row.pe_raw for row in self.rows]
        scaled = [row.pe_scaled for row in self.rows]
        return (min(raw), max(raw)), (min(scaled), max(scaled))

    def write(self, path: str):
        (raw_lo, raw_hi), (scaled_lo, scaled_hi) = self.pe_range()
        comments = [f"{key} = {value}" for key, value in sorted(self.metadata.items())]
        comments += [f"pe_raw = {raw_lo:.6g}..{raw_hi:.6g}", f"pe_scaled = {scaled_lo:.6g}..{scaled_hi:.6g}",
                     "linf = max over coarse Lagrange nodes"]
        write_csv(path, CSV_HEADER, self.csv_rows(), comments=comments)


def _as_reference(reference, space):
    if isinstance(reference, DiscreteFunction):
        return reference.restrict(space)
    return interpolate(space, reference)


def error_norms(u_h: DiscreteFunction, u_ref: Union[DiscreteFunction, Callable]) -> ErrorReport:
    """
    L2 and Linf norms of u_h - Pi_h u_ref. u_ref is a discrete function on any mesh covering
    the domain, or a callable evaluated at the Lagrange nodes.
    """
    space = u_h.space
    difference = u_h.values - _as_reference(u_ref, space).values
    mass = assemble_mass(space)
    l2 = math.sqrt(max(0.0, float(difference @ (mass @ difference))))
    linf = float(np.abs(difference).max()) if difference.size else 0.0
    mesh = space.mesh
    return ErrorReport(l2=l2, linf=linf, mesh=f"{mesh.num_elements} elements", degree=space.degree)


def exact_l2_error(u_h: DiscreteFunction, exact: Callable) -> float:
    """||u - u_h||_0 by quadrature of the exact solution"""
    space = u_h.space
    mesh = space.mesh
    rule = quadrature_for(space.degree, "mass", mesh.dimension)
    v0, B, det, _ = mesh.affine_maps()
    xi = rule.reference_points
    points = v0[:, None, :] + np.einsum("kab,qb->kqa", B, xi)
    basis = space.element.values(xi)
    u_q = np.einsum("qi,ki->kq", basis, u_h.values[space.element_dofs])
    exact_q = np.asarray(exact(points.reshape(-1, mesh.dimension)), dtype=float).reshape(u_q.shape)
    weights = rule.weights[None, :] * np.abs(det)[:, None]
    return math.sqrt(float(np.sum(weights * (exact_q - u_q) ** 2)))


def _mean(values) -> float:
    # fsum keeps the mean independent of row order
    return math.fsum(values) / len(values)


def aggregate_means(rows: Sequence[ErrorRow], suite: str, degree: int, per_param1: bool = False) -> List[ErrorRow]:
    """Arithmetic means per formula (param1=MEAN) and optionally per formula and param1"""
    groups = OrderedDict()
    for row in rows:
        groups.setdefault((row.formula, MEAN, None), []).append(row)
        if per_param1:
            groups.setdefault((row.formula, row.param1, MEAN), []).append(row)
    means = []
    for (formula, param1, param2), members in groups.items():
        means.append(ErrorRow(formula=formula, degree=degree, test=suite, param1=param1, param2=param2,
                              l2=_mean([m.l2 for m in members]),
                              linf=_mean([m.linf for m in members]),
                              pe_raw=_mean([m.pe_raw for m in members]),
                              pe_scaled=_mean([m.pe_scaled for m in members])))
    overall = [row for row in means if row.param1 == MEAN]
    return overall + [row for row in means if row.param1 != MEAN]


@dataclass
class _Instance:
    suite: str
    param1: str
    param2: Optional[str]
    mesh: Mesh
    problem: ProblemSpec
    degree: int
    fine_factor: int
    formulas: List[TauFormula]
    table: object
    method: str


def _evaluate(instance: _Instance) -> List[ErrorRow]:
    """Reference solve, then one stabilized solve per formula"""
    method = StabilizationMethod.from_name(instance.method)
    space = build_space(instance.mesh, instance.degree)
    reference = reference_solution(instance.problem, instance.mesh, instance.degree, instance.fine_factor,
                                   TauFormula.CODINA, method)
    data = element_flow_data(space, instance.problem)
    pe_scaled = float(peclet_number(data).max())
    pe_raw = pe_scaled * instance.degree
    rows = []
    for formula in instance.formulas:
        tau = compute_tau(formula, data, instance.table)
        u_h = solve_stabilized(space, instance.problem, method, tau)
        report = error_norms(u_h, reference)
        if not (np.isfinite(report.l2) and np.isfinite(report.linf)):
            logger.warning("Non-finite error for %s at %s=%s", formula.label, instance.param1, instance.param2)
        rows.append(ErrorRow(formula=formula.label, degree=instance.degree, test=instance.suite,
                             param1=instance.param1, param2=instance.param2, l2=report.l2, linf=report.linf,
                             pe_raw=pe_raw, pe_scaled=pe_scaled))
    logger.info("%s %s/%s done (Pe_h %.4g)", instance.suite, instance.param1, instance.param2, pe_scaled)
    return rows


def _run(instances: List[_Instance], jobs: int) -> List[ErrorRow]:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate, instances, chunksize=1))
    else:
        results = [_evaluate(instance) for instance in instances]
    return [row for rows in results for row in rows]


def _check_table(formulas, table, method: str):
    if table is not None and table.kind != method:
        logger.warning("Table was calibrated for '%s' but the sweep uses '%s'", table.kind, method)
    missing = [f.label for f in formulas if f.needs_table and table is None]
    if missing:
        raise ValueError(f"Formulas {missing} need a stabilization table (--table)")


def run_test1(spec: SweepSpec, table=None) -> SuiteResult:
    """
    Unit square, mu, f = sin(pi x) cos(pi y), a = k sqrt(2) (cos alpha, sin alpha) with
    alpha = n pi / 10 for every angle index n and magnitude k.
    """
    _check_table(spec.formulas, table, spec.method)
    mesh = build_structured((0.0, 1.0, 0.0, 1.0), spec.cells, spec.cells)
    instances = [
        _Instance("test1", str(n), f"{k:g}", mesh, angle_sweep_problem(n, k, spec.mu), spec.degree,
                  spec.fine_factor, spec.formulas, table, spec.method)
        for n in spec.angles for k in spec.magnitudes
    ]
    rows = _run(instances, spec.jobs)
    return SuiteResult("test1", spec.degree, rows, _metadata(spec, mesh))


def run_test2(spec: SweepSpec, table=None) -> SuiteResult:
    """Rectangle (0, 1) x (0, 1/2), f = 1, rotating velocity, one instance per viscosity"""
    _check_table(spec.formulas, table, spec.method)
    mesh = build_structured(TEST2_DOMAIN, spec.cells, max(1, spec.cells // 2))
    instances = [
        _Instance("test2", f"{mu:g}", None, mesh, rotating_flow_problem(mu), spec.degree, spec.fine_factor,
                  spec.formulas, table, spec.method)
        for mu in spec.viscosities
    ]
    rows = _run(instances, spec.jobs)
    return SuiteResult("test2", spec.degree, rows, _metadata(spec, mesh))


def run_unstructured(mesh: Mesh, velocity: np.ndarray, viscosities: Sequence[float],
                     formulas: Sequence = ANALYTIC_FORMULAS, degree: int = 1, table=None,
                     fine_factor: int = None, method: str = "tbt", jobs: int = 1) -> SuiteResult:
    """Imported mesh and per-node velocity; the reference splits every triangle into four"""
    formulas = [TauFormula.parse(f) for f in formulas]
    if not len(viscosities):
        raise ValueError("Viscosity list is empty")
    _check_table(formulas, table, method)
    fine_factor = fine_factor or config.UNSTRUCTURED_FINE_FACTOR
    instances = [
        _Instance("unstructured", f"{mu:g}", None, mesh, imported_problem(mesh, velocity, mu), degree, fine_factor,
                  formulas, table, method)
        for mu in viscosities
    ]
    rows = _run(instances, jobs)
    metadata = {"mesh": f"{mesh.num_nodes} nodes, {mesh.num_elements} elements", "fine_factor": str(fine_factor),
                "reference": TauFormula.CODINA.value, "method": method}
    return SuiteResult("unstructured", degree, rows, metadata)


def _metadata(spec: SweepSpec, mesh: Mesh) -> Dict[str, str]:
    return {"mesh": f"{mesh.grid.cells[0]}x{mesh.grid.cells[1]} structured", "fine_factor": str(spec.fine_factor),
            "reference": TauFormula.CODINA.value, "method": spec.method}


@dataclass
class ConvergenceResult:
    degree: int
    mode: str
    cells: List[int]
    h: List[float]
    l2: List[float]
    slope: float

    def rows(self):
        return [(self.degree, self.mode, n, h, e) for n, h, e in zip(self.cells, self.h, self.l2)]


def convergence_rate(h: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(h)"""
    return float(np.polyfit(np.log(h), np.log(errors), 1)[0])


def convergence_study(degree: int, cells: Sequence[int] = None, velocity=(1.0, 0.5), mu: float = 1.0,
                      interpolation_only: bool = False) -> ConvergenceResult:
    """
    L2 errors of unstabilized solves (or of the nodal interpolant) of the manufactured
    solution sin(pi x) sin(pi y) on the unit square, and the observed order.
    """
    cells = list(cells or config.DESK_SCALE["convergence"]["cells"])
    if len(cells) < 2:
        raise ValueError("A convergence study needs at least two meshes")
    problem, exact = manufactured_problem(velocity, mu)
    method = StabilizationMethod("term_by_term")
    hs, errors = [], []
    for n in cells:
        space = build_space(build_structured((0.0, 1.0, 0.0, 1.0), n, n), degree)
        u_h = interpolate(space, exact) if interpolation_only else solve_stabilized(space, problem, method, 0.0)
        hs.append(1.0 / n)
        errors.append(exact_l2_error(u_h, exact))
        logger.debug("P%d n=%d: L2 error %.6e", degree, n, errors[-1])
    mode = "interpolation" if interpolation_only else "galerkin"
    return ConvergenceResult(degree=degree, mode=mode, cells=cells, h=hs, l2=errors,
                             slope=convergence_rate(hs, errors))


def sweep_for(suite: str, scale: str, degree: int, formulas=None, jobs: int = 1, method: str = "tbt") -> SweepSpec:
    """Sweep sizes of the desk-scale and full-scale presets"""
    if scale not in SCALES:
        raise ValueError(f"Unknown scale '{scale}', expected one of {SCALES}")
    formulas = list(formulas or ANALYTIC_FORMULAS)
    if suite == "test1":
        if scale == "full":
            return SweepSpec(degree=degree, cells=config.TEST1_MESH[degree], fine_factor=config.TEST1_FINE_FACTORS[degree],
                             magnitudes=list(config.TEST1_MAGNITUDES), formulas=formulas, jobs=jobs, method=method)
        desk = config.DESK_SCALE["test1"]
        return SweepSpec(degree=degree, cells=desk["cells"][degree], fine_factor=desk["fine_factor"],
                         magnitudes=list(desk["magnitudes"]), formulas=formulas, jobs=jobs, method=method)
    if suite == "test2":
        if scale == "full":
            return SweepSpec(degree=degree, cells=config.TEST2_CELLS, fine_factor=config.TEST2_FINE_FACTORS[degree],
                             viscosities=list(config.TEST2_VISCOSITIES), formulas=formulas, jobs=jobs, method=method)
        desk = config.DESK_SCALE["test2"]
        return SweepSpec(degree=degree, cells=desk["cells"], fine_factor=desk["fine_factor"],
                         viscosities=list(desk["viscosities"]), formulas=formulas, jobs=jobs, method=method)
    raise ValueError(f"No sweep preset for suite '{suite}'")
