"""
Sparse solver for the assembled nonsymmetric systems
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

import config
from src.utils.errors import SolverError

logger = logging.getLogger(__name__)

METHODS = ("direct", "iterative")


@dataclass
class SolverReport:
    """Relative residual ||b - Ax|| / ||b|| (||b|| replaced by 1 when b = 0) and statistics"""
    relative_residual: float
    method: str
    size: int
    nnz: int
    iterations: int = 0
    stats: dict = field(default_factory=dict)


def relative_residual(matrix, x: np.ndarray, rhs: np.ndarray) -> float:
    scale = np.linalg.norm(rhs)
    return float(np.linalg.norm(rhs - matrix @ x) / (scale if scale > 0 else 1.0))


class Factorization:
    """
    Reusable factorization of one matrix, for several right-hand sides.

    The direct mode wraps SuperLU with a fixed (COLAMD) ordering so repeated solves are
    bit-identical; the iterative mode runs GMRES preconditioned by an incomplete LU.
    """

    def __init__(self, matrix, method: str = None, rtol: float = None):
        self.method = method or config.SOLVER_METHOD
        if self.method not in METHODS:
            raise ValueError(f"Unknown solver method '{self.method}', expected one of {METHODS}")
        self.rtol = config.SOLVER_RTOL if rtol is None else rtol
        self.matrix = sp.csc_matrix(matrix)
        n, m = self.matrix.shape
        if n != m:
            raise ValueError(f"Matrix must be square, got {n}x{m}")
        self._lu = None
        self._ilu = None
        try:
            if self.method == "direct":
                self._lu = spla.splu(self.matrix, permc_spec="COLAMD")
            else:
                self._ilu = spla.spilu(self.matrix, drop_tol=config.ILU_DROP_TOL, fill_factor=config.ILU_FILL_FACTOR)
        except RuntimeError as e:
            raise SolverError(f"Factorization of a {n}x{n} matrix failed: {e}") from e

    def solve(self, rhs: np.ndarray) -> Tuple[np.ndarray, SolverReport]:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.matrix.shape[0],):
            raise ValueError(f"Right-hand side has shape {rhs.shape}, expected ({self.matrix.shape[0]},)")
        iterations = 0
        if self._lu is not None:
            x = self._lu.solve(rhs)
            residual = relative_residual(self.matrix, x, rhs)
            if residual > self.rtol:
                # one step of iterative refinement
                x = x + self._lu.solve(rhs - self.matrix @ x)
                residual = relative_residual(self.matrix, x, rhs)
                iterations = 1
        else:
            x, iterations = self._gmres(rhs)
            residual = relative_residual(self.matrix, x, rhs)

        if not np.all(np.isfinite(x)):
            raise SolverError("Solution is not finite; the matrix is numerically singular", residual)
        if residual > self.rtol:
            raise SolverError(f"{self.method} solve did not reach tolerance {self.rtol:.1e}", residual)

        report = SolverReport(relative_residual=residual, method=self.method, size=self.matrix.shape[0],
                              nnz=self.matrix.nnz, iterations=iterations)
        if self._lu is not None:
            report.stats = {"fill_l": int(self._lu.L.nnz), "fill_u": int(self._lu.U.nnz)}
        logger.debug("Solved %d unknowns (%s), relative residual %.2e", report.size, report.method, residual)
        return x, report

    def _gmres(self, rhs: np.ndarray):
        preconditioner = spla.LinearOperator(self.matrix.shape, matvec=self._ilu.solve)
        count = [0]

        def callback(_):
            count[0] += 1

        x, info = spla.gmres(self.matrix, rhs, M=preconditioner, rtol=self.rtol * 0.1, atol=0.0,
                             restart=100, maxiter=config.ITERATIVE_MAXITER, callback=callback,
                             callback_type="pr_norm")
        if info != 0:
            raise SolverError(f"GMRES did not converge after {count[0]} iterations",
                              relative_residual(self.matrix, x, rhs))
        return x, count[0]


def solve(system, method: str = None, rtol: float = None) -> Tuple[np.ndarray, SolverReport]:
    """Solve a LinearSystem whose Dirichlet conditions are already applied"""
    if system.matrix.shape[0] != system.rhs.shape[0]:
        raise ValueError(f"Matrix has {system.matrix.shape[0]} rows but the right-hand side has {system.rhs.shape[0]}")
    return Factorization(system.matrix, method=method, rtol=rtol).solve(system.rhs)
