"""
Analytic stabilization coefficients, element Peclet numbers and table-backed coefficients

Every formula works on arrays of elements. For degree l >= 2 the element lengths are replaced
by h/l before evaluation.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from src.fem.assembly import ProblemSpec, element_averages
from src.fem.fe_space import FiniteElementSpace
from src.fem.mesh import h_flow_all

logger = logging.getLogger(__name__)

SERIES_THRESHOLD = 1e-6
HAUKE_DIFFUSIVE = 24.24
FRANCA_VALENTIN_M = 1.0 / 3.0


@dataclass(frozen=True, eq=False)
class ElementFlowData:
    """
    Per-element flow data: a_bar (m, d) element-average velocity, mu_K (m,) element-average
    diffusion, h_K (m,) diameters, h_flow (m,) flow-aligned lengths, degree l.
    """
    a_bar: np.ndarray
    mu_K: np.ndarray
    h_K: np.ndarray
    h_flow: np.ndarray
    degree: int = 1

    @classmethod
    def single(cls, a_bar, mu: float, h: float, h_flow: float = None, degree: int = 1) -> "ElementFlowData":
        """Flow data of one element, convenient for constant-coefficient problems"""
        a_bar = np.atleast_1d(np.asarray(a_bar, dtype=float))[None, :]
        return cls(a_bar=a_bar, mu_K=np.array([float(mu)]), h_K=np.array([float(h)]),
                   h_flow=np.array([float(h if h_flow is None else h_flow)]), degree=degree)

    @property
    def a_norm(self) -> np.ndarray:
        return np.linalg.norm(self.a_bar, axis=1)

    @property
    def h(self) -> np.ndarray:
        return effective_h(self.h_K, self.degree)

    @property
    def h_flow_effective(self) -> np.ndarray:
        return effective_h(self.h_flow, self.degree)

    def scaled(self, factor: float) -> "ElementFlowData":
        """Same element with a and mu multiplied by `factor` (Peclet numbers unchanged)"""
        return ElementFlowData(self.a_bar * factor, self.mu_K * factor, self.h_K, self.h_flow, self.degree)


def effective_h(h, degree: int):
    """Distance between consecutive Lagrange nodes on an edge: h / l"""
    if degree not in (1, 2, 3):
        raise ValueError(f"Unsupported Lagrange degree {degree}")
    return np.asarray(h, dtype=float) / degree


def element_flow_data(space: FiniteElementSpace, problem: ProblemSpec) -> ElementFlowData:
    a_bar, mu_K = element_averages(space, problem)
    mesh = space.mesh
    return ElementFlowData(a_bar=a_bar, mu_K=mu_K, h_K=mesh.diameters(), h_flow=h_flow_all(mesh, a_bar),
                           degree=space.degree)


def peclet_vector(data: ElementFlowData) -> np.ndarray:
    """Directional element Peclet numbers P_i = a_i h / (2 mu), shape (m, d)"""
    if np.any(data.mu_K <= 0):
        raise ValueError("Element diffusion mu_K must be positive")
    return data.a_bar * (data.h / (2.0 * data.mu_K))[:, None]


def peclet_number(data: ElementFlowData) -> np.ndarray:
    """Scalar element Peclet number Pe_h = h ||a|| / (2 mu)"""
    return data.h * data.a_norm / (2.0 * data.mu_K)


def _safe(values: np.ndarray) -> np.ndarray:
    return np.where(values > 0, values, 1.0)


def one_d_phi(pe: np.ndarray) -> np.ndarray:
    """P coth(P) - 1, with its series P^2/3 - P^4/45 near zero"""
    pe = np.asarray(pe, dtype=float)
    small = pe < SERIES_THRESHOLD
    exact = _safe(pe) / np.tanh(_safe(pe)) - 1.0
    series = pe ** 2 / 3.0 - pe ** 4 / 45.0
    return np.where(small, series, exact)


def tau_one_d(data: ElementFlowData) -> np.ndarray:
    """mu / ||a||^2 (Pe coth Pe - 1), and its limit h^2 / (12 mu) (1 - Pe^2 / 15) at small Pe"""
    a = data.a_norm
    pe = peclet_number(data)
    small = pe < SERIES_THRESHOLD
    diffusive = data.h ** 2 / (12.0 * data.mu_K) * (1.0 - pe ** 2 / 15.0)
    return np.where(small, diffusive, data.mu_K / _safe(a) ** 2 * one_d_phi(pe))


def tau_codina(data: ElementFlowData) -> np.ndarray:
    """((4 mu / h^2)^2 + (2 ||a|| / h)^2)^(-1/2)"""
    h = data.h
    return 1.0 / np.hypot(4.0 * data.mu_K / h ** 2, 2.0 * data.a_norm / h)


def tau_codina_colomes(data: ElementFlowData) -> np.ndarray:
    """Codina's coefficient with the flow-aligned length in the advective term"""
    return 1.0 / np.hypot(4.0 * data.mu_K / data.h ** 2, 2.0 * data.a_norm / data.h_flow_effective)


def tau_hauke(data: ElementFlowData) -> np.ndarray:
    """min(h_flow / (sqrt(3) ||a||), h^2 / (24.24 mu))"""
    a = data.a_norm
    diffusive = data.h ** 2 / (HAUKE_DIFFUSIVE * data.mu_K)
    advective = np.where(a > 0, data.h_flow_effective / (np.sqrt(3.0) * _safe(a)), np.inf)
    return np.minimum(advective, diffusive)


def tau_franca_valentin(data: ElementFlowData) -> np.ndarray:
    """
    (2 mu xi(Pe) / (m h^2))^(-1) with m = 1/3, Pe = m ||a|| h / mu, xi(x) = max(1, x):
    m h^2 / (2 mu) when Pe <= 1, h / (2 ||a||) otherwise.
    """
    h, a, mu = data.h, data.a_norm, data.mu_K
    pe = FRANCA_VALENTIN_M * a * h / mu
    diffusive = FRANCA_VALENTIN_M * h ** 2 / (2.0 * mu)
    advective = h / (2.0 * _safe(a))
    return np.where(pe <= 1.0, diffusive, advective)


def tau_least_squares(data: ElementFlowData, table, variant: str = "isotropic") -> np.ndarray:
    """
    h / ||a|| * phi(|P|) from a calibrated table (h_flow for the 'flow' variant).

    Peclet components are looked up by absolute value; elements without velocity get Codina's
    diffusive value.
    """
    if variant not in ("isotropic", "flow"):
        raise ValueError(f"Unknown least-squares variant '{variant}'")
    peclet = peclet_vector(data)
    if table.dimension != peclet.shape[1]:
        raise ValueError(f"Table has dimension {table.dimension} but the mesh has dimension {peclet.shape[1]}")
    flipped = int(np.count_nonzero(np.any(peclet < 0, axis=1)))
    if flipped:
        logger.debug("Looking up %d elements with negative Peclet components by absolute value", flipped)
    phi = table.interpolate(np.abs(peclet))
    length = data.h if variant == "isotropic" else data.h_flow_effective
    a = data.a_norm
    return np.where(a > 0, length / _safe(a) * phi, tau_codina(data))


class TauFormula(Enum):
    ONE_D = "one_d"
    CODINA = "codina"
    CODINA_COLOMES = "codina_colomes"
    HAUKE = "hauke"
    FRANCA_VALENTIN = "franca_valentin"
    LEAST_SQUARES = "least_squares"
    LEAST_SQUARES_FLOW = "least_squares_flow"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def needs_table(self) -> bool:
        return self in (TauFormula.LEAST_SQUARES, TauFormula.LEAST_SQUARES_FLOW)

    @classmethod
    def parse(cls, name) -> "TauFormula":
        if isinstance(name, cls):
            return name
        for formula in cls:
            if name in (formula.value, formula.label):
                return formula
        raise ValueError(f"Unknown coefficient formula '{name}', expected one of {[f.value for f in cls]}")


_LABELS = {
    TauFormula.ONE_D: "1D",
    TauFormula.CODINA: "C",
    TauFormula.CODINA_COLOMES: "CC",
    TauFormula.HAUKE: "H",
    TauFormula.FRANCA_VALENTIN: "FV",
    TauFormula.LEAST_SQUARES: "LS",
    TauFormula.LEAST_SQUARES_FLOW: "LSflow",
}

ANALYTIC_FORMULAS = (TauFormula.ONE_D, TauFormula.CODINA, TauFormula.CODINA_COLOMES, TauFormula.HAUKE,
                     TauFormula.FRANCA_VALENTIN)

_ANALYTIC = {
    TauFormula.ONE_D: tau_one_d,
    TauFormula.CODINA: tau_codina,
    TauFormula.CODINA_COLOMES: tau_codina_colomes,
    TauFormula.HAUKE: tau_hauke,
    TauFormula.FRANCA_VALENTIN: tau_franca_valentin,
}


def compute_tau(formula, data: ElementFlowData, table=None) -> np.ndarray:
    """Per-element coefficients for any formula; table-backed formulas need a loaded PhiTable"""
    formula = TauFormula.parse(formula)
    if formula.needs_table:
        if table is None:
            raise ValueError(f"Formula '{formula.value}' needs a stabilization table (--table)")
        variant = "flow" if formula is TauFormula.LEAST_SQUARES_FLOW else "isotropic"
        return tau_least_squares(data, table, variant)
    return _ANALYTIC[formula](data)


def tau_for(space: FiniteElementSpace, problem: ProblemSpec, formula, table=None) -> np.ndarray:
    return compute_tau(formula, element_flow_data(space, problem), table)
