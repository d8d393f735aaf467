from sqlalchemy.orm import Session
from datetime import datetime
import math
import sys
import os

# Add parent directory to path to import models
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(__file__))))
from src.database.models import CalibrationRun, CalibrationIterate, BenchmarkRecord

PECLET_MATCH = 1e-12


def _optional(value):
    return None if value is None or math.isnan(value) else float(value)


class LedgerService:
    """
    Service class for recording calibration runs and benchmark results in the database
    """

    def __init__(self, db_session: Session):
        self.db = db_session

    def get_run(self, run_id: int):
        """
        Retrieve a calibration run by its ID
        """
        return self.db.query(CalibrationRun).filter(CalibrationRun.id == run_id).first()

    def get_runs(self, kind: str = None, degree: int = None, skip: int = 0, limit: int = 1000):
        """
        Retrieve calibration runs, optionally for one stabilization kind and degree
        """
        query = self.db.query(CalibrationRun)
        if kind is not None:
            query = query.filter(CalibrationRun.kind == kind)
        if degree is not None:
            query = query.filter(CalibrationRun.degree == degree)
        return query.order_by(CalibrationRun.peclet_x, CalibrationRun.peclet_y).offset(skip).limit(limit).all()

    def find_run(self, kind: str, degree: int, peclet):
        """
        Retrieve the run calibrated at a Peclet vector, if any
        """
        peclet = [float(p) for p in peclet]
        query = self.db.query(CalibrationRun)\
            .filter(CalibrationRun.kind == kind)\
            .filter(CalibrationRun.degree == degree)\
            .filter(CalibrationRun.dimension == len(peclet))\
            .filter(CalibrationRun.peclet_x.between(peclet[0] - PECLET_MATCH, peclet[0] + PECLET_MATCH))
        if len(peclet) > 1:
            query = query.filter(CalibrationRun.peclet_y.between(peclet[1] - PECLET_MATCH, peclet[1] + PECLET_MATCH))
        return query.first()

    def record_calibration(self, result, peclet, kind: str, degree: int, replace: bool = False):
        """
        Store a CalibrationResult with its iterate trace.

        A run already stored for the same kind, degree and Peclet vector is an error unless
        replace=True, which deletes it first.
        """
        peclet = [float(p) for p in peclet]
        if len(peclet) not in (1, 2):
            raise ValueError(f"Peclet vector must have 1 or 2 components, got {len(peclet)}")
        existing = self.find_run(kind, degree, peclet)
        if existing:
            if not replace:
                raise ValueError(f"Calibration for {kind} P{degree} at Pe={peclet} already exists (run {existing.id})")
            self.db.delete(existing)
            self.db.flush()

        run = CalibrationRun(
            kind=kind,
            degree=degree,
            dimension=len(peclet),
            peclet_x=peclet[0],
            peclet_y=peclet[1] if len(peclet) > 1 else None,
            tau_opt=float(result.tau_opt),
            j_min=float(result.J_min),
            phi=float(result.phi),
            boundary_hit=bool(result.boundary_hit),
            iterations=int(result.iterations),
            converged=bool(result.converged),
            created_at=datetime.utcnow()
        )
        for index, entry in enumerate(result.trace):
            run.iterates.append(CalibrationIterate(
                index=index,
                tau=float(entry.tau),
                j=float(entry.J),
                dj=_optional(entry.dJ),
                d2j=_optional(entry.d2J)
            ))
        self.db.add(run)
        self.db.commit()
        self.db.refresh(run)
        return run

    def delete_run(self, run_id: int):
        """
        Delete a calibration run and its iterates
        """
        run = self.get_run(run_id)
        if not run:
            return False
        self.db.delete(run)
        self.db.commit()
        return True

    def record_benchmark(self, rows, suite: str):
        """
        Store benchmark rows (objects with formula, degree, param1, param2, l2, linf)
        """
        records = [
            BenchmarkRecord(
                suite=suite,
                formula=row.formula,
                degree=int(row.degree),
                param1=str(row.param1),
                param2=None if row.param2 is None else str(row.param2),
                l2=float(row.l2),
                linf=float(row.linf),
                created_at=datetime.utcnow()
            )
            for row in rows
        ]
        self.db.add_all(records)
        self.db.commit()
        return records

    def get_benchmark(self, suite: str, formula: str = None):
        """
        Retrieve benchmark rows of a suite, optionally for one formula
        """
        query = self.db.query(BenchmarkRecord).filter(BenchmarkRecord.suite == suite)
        if formula is not None:
            query = query.filter(BenchmarkRecord.formula == formula)
        return query.order_by(BenchmarkRecord.id).all()
