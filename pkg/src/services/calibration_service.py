"""
Least-squares calibration of a uniform stabilization coefficient

For a constant-coefficient problem every tau_K equals one scalar tau. The calibrated value
minimizes J(tau) = 1/2 ||u_h(tau) - Pi_h u||_0^2 over [tau_min, tau_max], where u is a reference
solution (a stabilized solve on a nested fine mesh, or an exact solution).

With A(tau) = G + tau S and b(tau) = g + tau s, the sensitivities z = du_h/dtau and
w = d2u_h/dtau2 solve

    A(tau) z = s - S u_h        A(tau) w = -2 S z

with homogeneous Dirichlet rows, so J' = (e, z) and J'' = ||z||^2 + (e, w), e = u_h - Pi_h u.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

import config
from src.fem.assembly import (ParametrizedSystem, ProblemSpec, StabilizationMethod, assemble_mass,
                              solve_stabilized)
from src.fem.fe_space import DiscreteFunction, FiniteElementSpace, build_space, interpolate
from src.fem.fields import constant_problem
from src.fem.linear_solver import Factorization
from src.fem.mesh import Mesh, build_interval, build_structured, refine
from src.stabilization.tau_formulas import (ANALYTIC_FORMULAS, TauFormula, compute_tau, effective_h,
                                            element_flow_data, tau_for)
from src.utils.errors import CalibrationError
from src.utils.files import write_csv

logger = logging.getLogger(__name__)

GOLDEN_RATIO = 2.0 / (1.0 + math.sqrt(5.0))
TRACE_HEADER = ("iterate", "tau", "J", "dJ", "d2J")


@dataclass
class CalibrationProblem:
    """
    Coarse space, constant-coefficient problem and stabilization method, plus the reference
    configuration. The search bracket is [alpha_min h^2, alpha_max h^2] with h the effective
    element length.
    """
    space: FiniteElementSpace
    problem: ProblemSpec
    method: StabilizationMethod
    alpha_min: float
    alpha_max: float
    fine_factor: int = 1
    reference_formula: Optional[TauFormula] = None
    exact: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.alpha_max > self.alpha_min > 0:
            raise ValueError(f"Bracket needs alpha_max > alpha_min > 0, got ({self.alpha_min}, {self.alpha_max})")
        if self.fine_factor < 1:
            raise ValueError(f"Reference fine factor must be at least 1, got {self.fine_factor}")

    @property
    def h(self) -> float:
        return float(effective_h(self.space.mesh.diameters().max(), self.space.degree))

    @property
    def bracket(self):
        h2 = self.h ** 2
        return self.alpha_min * h2, self.alpha_max * h2

    @property
    def velocity_norm(self) -> float:
        a_bar = element_flow_data(self.space, self.problem).a_norm
        return float(a_bar.mean())


@dataclass
class TraceEntry:
    tau: float
    J: float
    dJ: float = float("nan")
    d2J: float = float("nan")


@dataclass
class CalibrationResult:
    """tau_opt minimizes J; phi = ||a|| tau_opt / h is its dimensionless form"""
    tau_opt: float
    J_min: float
    phi: float
    trace: List[TraceEntry] = field(default_factory=list)
    boundary_hit: bool = False
    iterations: int = 0
    converged: bool = True
    strategy: str = "newton"


def default_bracket(space: FiniteElementSpace, problem: ProblemSpec, expansion: float = None,
                    upper_factor: float = None):
    """
    (alpha_min, alpha_max) enclosing every analytic coefficient of the instance: the smallest
    divided by `expansion`, the largest multiplied by `upper_factor`. J is convex on this range.
    """
    expansion = config.BRACKET_EXPANSION if expansion is None else expansion
    upper_factor = config.BRACKET_UPPER_FACTOR if upper_factor is None else upper_factor
    if expansion < 1.0 or upper_factor < 1.0:
        raise ValueError(f"Bracket factors must be at least 1, got {expansion} and {upper_factor}")
    data = element_flow_data(space, problem)
    taus = np.concatenate([compute_tau(formula, data) for formula in ANALYTIC_FORMULAS])
    taus = taus[taus > 0]
    if not taus.size:
        raise CalibrationError("No analytic coefficient is positive for this instance")
    h2 = float(effective_h(space.mesh.diameters().max(), space.degree)) ** 2
    return float(taus.min()) / expansion / h2, float(taus.max()) * upper_factor / h2


def default_reference_formula(dimension: int) -> TauFormula:
    """The nodally exact 1D coefficient in 1D, Codina's coefficient otherwise"""
    return TauFormula.ONE_D if dimension == 1 else TauFormula.CODINA


def reference_solution(problem: ProblemSpec, mesh: Mesh, degree: int, fine_factor: int,
                       reference_formula: TauFormula = None, method: StabilizationMethod = None) -> DiscreteFunction:
    """Stabilized solve on `mesh` refined by `fine_factor`, with an analytic coefficient"""
    method = method or StabilizationMethod("term_by_term")
    formula = reference_formula or default_reference_formula(mesh.dimension)
    fine_space = build_space(refine(mesh, fine_factor), degree)
    tau = tau_for(fine_space, problem, formula)
    logger.debug("Reference solve: %d dofs, factor %d, %s", fine_space.num_dofs, fine_factor, formula.value)
    return solve_stabilized(fine_space, problem, method, tau)


class Calibrator:
    """
    Evaluates J and its derivatives for one calibration problem.

    The Galerkin and unit-coefficient stabilization systems are assembled once; the state
    factorization is reused for the sensitivity solves at the same tau.
    """

    def __init__(self, calibration: CalibrationProblem, reference: DiscreteFunction = None,
                 solver_method: str = None):
        self.calibration = calibration
        self.space = calibration.space
        self.solver_method = solver_method
        self.system = ParametrizedSystem(self.space, calibration.problem, calibration.method)
        self.mass = assemble_mass(self.space)
        self.reference = reference if reference is not None else reference_for(calibration)
        self.target = self.reference.restrict(self.space).values
        self.scale = max(float(self.target @ (self.mass @ self.target)), np.finfo(float).tiny)
        self._tau = None
        self._state = None

    def state(self, tau: float):
        """(u_h(tau) values, factorization of A(tau))"""
        if tau != self._tau:
            if not (np.isfinite(tau) and tau >= 0):
                raise CalibrationError(f"Coefficient tau={tau} is not admissible", tau=tau)
            system = self.system.at(tau)
            factorization = Factorization(system.matrix, method=self.solver_method)
            values, _ = factorization.solve(system.rhs)
            self._tau, self._state = tau, (values, factorization, system)
        values, factorization, _ = self._state
        return values, factorization

    def error(self, tau: float) -> np.ndarray:
        values, _ = self.state(tau)
        return values - self.target

    def functional_J(self, tau: float) -> float:
        e = self.error(tau)
        return 0.5 * float(e @ (self.mass @ e))

    def sensitivity_z(self, tau: float) -> DiscreteFunction:
        values, factorization = self.state(tau)
        _, _, system = self._state
        stabilization = self.system.stabilization
        rhs = self.system.homogeneous(system, stabilization.rhs - stabilization.matrix @ values)
        z, _ = factorization.solve(rhs)
        return DiscreteFunction(self.space, z)

    def sensitivity_w(self, tau: float, z: DiscreteFunction) -> DiscreteFunction:
        _, factorization = self.state(tau)
        _, _, system = self._state
        rhs = self.system.homogeneous(system, -2.0 * (self.system.stabilization.matrix @ z.values))
        w, _ = factorization.solve(rhs)
        return DiscreteFunction(self.space, w)

    def derivatives_J(self, tau: float):
        """(J, J', J'') at tau"""
        e = self.error(tau)
        Me = self.mass @ e
        z = self.sensitivity_z(tau)
        w = self.sensitivity_w(tau, z)
        J = 0.5 * float(e @ Me)
        dJ = float(Me @ z.values)
        d2J = float(z.values @ (self.mass @ z.values)) + float(Me @ w.values)
        return J, dJ, d2J

    def _result(self, tau: float, J: float, trace, iterations: int, converged: bool, strategy: str):
        lo, hi = self.calibration.bracket
        boundary = tau <= lo * (1.0 + config.TOL_TAU) or tau >= hi * (1.0 - config.TOL_TAU)
        phi = self.calibration.velocity_norm * tau / self.calibration.h
        if boundary:
            logger.warning("Calibrated tau=%.6e sits on the bracket end [%.3e, %.3e]", tau, lo, hi)
        return CalibrationResult(tau_opt=tau, J_min=J, phi=phi, trace=trace, boundary_hit=boundary,
                                 iterations=iterations, converged=converged, strategy=strategy)

    def _checked(self, tau: float):
        values = self.derivatives_J(tau)
        if not all(np.isfinite(values)):
            raise CalibrationError(f"J is not finite at tau={tau:.6e}", tau=tau)
        return values

    def minimize(self) -> CalibrationResult:
        """
        Safeguarded Newton iteration on J' inside a shrinking bracket; steps that leave the
        bracket or meet J'' <= 0 are replaced by a geometric bisection.
        """
        lo, hi = self.calibration.bracket
        trace = []

        J, dJ, d2J = self._checked(lo)
        trace.append(TraceEntry(lo, J, dJ, d2J))
        if dJ >= 0:
            return self._result(lo, J, trace, 1, True, "newton")
        J, dJ, d2J = self._checked(hi)
        trace.append(TraceEntry(hi, J, dJ, d2J))
        if dJ <= 0:
            return self._result(hi, J, trace, 2, True, "newton")

        tol_grad = config.TOL_GRAD_FACTOR * self.scale
        tau = math.sqrt(lo * hi)
        converged = False
        iterations = 0
        for iterations in range(1, config.MAX_NEWTON_ITERATIONS + 1):
            J, dJ, d2J = self._checked(tau)
            trace.append(TraceEntry(tau, J, dJ, d2J))
            logger.debug("newton %d: tau=%.10e J=%.6e J'=%.3e J''=%.3e", iterations, tau, J, dJ, d2J)
            if abs(dJ) * tau <= tol_grad:
                converged = True
                break
            if dJ > 0:
                hi = tau
            else:
                lo = tau
            step = tau - dJ / d2J if d2J > 0 else float("nan")
            proposal = step if lo < step < hi else math.sqrt(lo * hi)
            if abs(proposal - tau) <= config.TOL_TAU * tau or hi - lo <= config.TOL_TAU * tau:
                tau = proposal
                J = self.functional_J(tau)
                trace.append(TraceEntry(tau, J))
                converged = True
                break
            tau = proposal
        if not converged:
            logger.warning("Newton iteration stopped after %d steps at tau=%.6e", iterations, tau)
        return self._result(tau, J, trace, iterations, converged, "newton")

    def minimize_golden(self) -> CalibrationResult:
        """Derivative-free golden-section search over log(tau)"""
        lo, hi = (math.log(v) for v in self.calibration.bracket)
        trace = []

        def objective(log_tau):
            tau = math.exp(log_tau)
            value = self.functional_J(tau)
            if not np.isfinite(value):
                raise CalibrationError(f"J is not finite at tau={tau:.6e}", tau=tau)
            trace.append(TraceEntry(tau, value))
            return value

        x1 = hi - GOLDEN_RATIO * (hi - lo)
        x2 = lo + GOLDEN_RATIO * (hi - lo)
        f1, f2 = objective(x1), objective(x2)
        iterations = 0
        while iterations < config.GOLDEN_MAX_ITERATIONS and hi - lo > config.TOL_TAU:
            if f2 > f1:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - GOLDEN_RATIO * (hi - lo)
                f1 = objective(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + GOLDEN_RATIO * (hi - lo)
                f2 = objective(x2)
            iterations += 1

        best = min(trace, key=lambda entry: entry.J)
        for end in self.calibration.bracket:
            value = self.functional_J(end)
            trace.append(TraceEntry(end, value))
            if value < best.J:
                best = trace[-1]
        converged = iterations < config.GOLDEN_MAX_ITERATIONS
        return self._result(best.tau, best.J, trace, iterations, converged, "golden")


def reference_for(calibration: CalibrationProblem) -> DiscreteFunction:
    space = calibration.space
    if calibration.exact is not None:
        return interpolate(space, calibration.exact)
    return reference_solution(calibration.problem, space.mesh, space.degree, calibration.fine_factor,
                              calibration.reference_formula, calibration.method)


def functional_J(tau: float, calibration: CalibrationProblem, reference: DiscreteFunction) -> float:
    return Calibrator(calibration, reference).functional_J(tau)


def sensitivity_z(tau: float, calibration: CalibrationProblem, reference: DiscreteFunction = None) -> DiscreteFunction:
    return Calibrator(calibration, reference).sensitivity_z(tau)


def sensitivity_w(tau: float, z: DiscreteFunction, calibration: CalibrationProblem,
                  reference: DiscreteFunction = None) -> DiscreteFunction:
    return Calibrator(calibration, reference).sensitivity_w(tau, z)


def derivatives_J(tau: float, calibration: CalibrationProblem, reference: DiscreteFunction):
    return Calibrator(calibration, reference).derivatives_J(tau)


def minimize_J(calibration: CalibrationProblem, reference: DiscreteFunction = None,
               use_derivatives: bool = True) -> CalibrationResult:
    calibrator = Calibrator(calibration, reference)
    return calibrator.minimize() if use_derivatives else calibrator.minimize_golden()


def training_mesh(dimension: int, degree: int, cells: int = None) -> Mesh:
    cells = cells or config.TRAINING_CELLS[degree]
    if dimension == 1:
        return build_interval((0.0, 1.0), cells)
    return build_structured((0.0, 1.0, 0.0, 1.0), cells, cells)


def training_problem(peclet: Sequence[float], degree: int, method: StabilizationMethod = None,
                     cells: int = None, fine_factor: int = None, reference_formula: TauFormula = None,
                     mu: float = 1.0) -> CalibrationProblem:
    """
    Constant-coefficient problem on the unit interval or square whose element Peclet vector
    is `peclet`: a_i = 2 mu P_i / h with h the effective element diameter.
    """
    peclet = np.atleast_1d(np.asarray(peclet, dtype=float))
    if not np.any(peclet != 0):
        raise ValueError("Training needs a non-zero Peclet vector")
    mesh = training_mesh(len(peclet), degree, cells)
    space = build_space(mesh, degree)
    h = float(effective_h(mesh.diameters().max(), degree))
    problem = constant_problem(2.0 * mu * peclet / h, mu)
    alpha_min, alpha_max = default_bracket(space, problem)
    return CalibrationProblem(space=space, problem=problem, method=method or StabilizationMethod("term_by_term"),
                              alpha_min=alpha_min, alpha_max=alpha_max,
                              fine_factor=fine_factor or config.TABLE_FINE_FACTORS[degree],
                              reference_formula=reference_formula)


def calibrate_peclet(peclet: Sequence[float], degree: int, method: StabilizationMethod = None,
                     **options) -> CalibrationResult:
    """Calibrate phi at one Peclet vector on the training problem"""
    calibration = training_problem(peclet, degree, method, **options)
    result = minimize_J(calibration)
    logger.info("P=%s: tau=%.6e phi=%.6e J=%.3e (%d iterations)", np.round(np.atleast_1d(peclet), 6).tolist(),
                result.tau_opt, result.phi, result.J_min, result.iterations)
    return result


def functional_surface(angles: Sequence[float], taus: Sequence[float], mu: float = 1.0, magnitude: float = 1.0,
                       cells: int = 20, degree: int = 1, method: StabilizationMethod = None,
                       fine_factor: int = 4):
    """
    J(tau) for velocities a = magnitude (cos alpha, sin alpha) on the unit square with the
    sin(pi x) cos(pi y) source. Returns rows (angle, tau, J).
    """
    method = method or StabilizationMethod("term_by_term")
    mesh = build_structured((0.0, 1.0, 0.0, 1.0), cells, cells)
    space = build_space(mesh, degree)
    rows = []
    for angle in angles:
        velocity = magnitude * np.array([math.cos(angle), math.sin(angle)])
        problem = constant_problem(velocity, mu)
        alpha_min, alpha_max = default_bracket(space, problem)
        calibration = CalibrationProblem(space, problem, method, alpha_min, alpha_max, fine_factor=fine_factor)
        calibrator = Calibrator(calibration)
        for tau in taus:
            rows.append((float(angle), float(tau), calibrator.functional_J(float(tau))))
    return rows


def write_trace(path: str, result: CalibrationResult):
    rows = [(i, entry.tau, entry.J, entry.dJ, entry.d2J) for i, entry in enumerate(result.trace)]
    write_csv(path, TRACE_HEADER, rows, comments=[f"strategy = {result.strategy}", f"tau_opt = {result.tau_opt!r}"])


def write_surface(path: str, rows):
    write_csv(path, ("angle", "tau", "J"), rows)
