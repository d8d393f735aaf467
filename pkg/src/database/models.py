from sqlalchemy import Column, Integer, String, DateTime, Boolean, Float, ForeignKey
from sqlalchemy.orm import relationship
import datetime
from .connection import Base


class CalibrationRun(Base):
    __tablename__ = "calibration_runs"

    id = Column(Integer, primary_key=True, index=True)
    kind = Column(String, nullable=False)  # stabilization method name, e.g. "tbt"
    degree = Column(Integer, nullable=False)
    dimension = Column(Integer, nullable=False)
    peclet_x = Column(Float, nullable=False)
    peclet_y = Column(Float, nullable=True)
    tau_opt = Column(Float, nullable=False)
    j_min = Column(Float, nullable=False)
    phi = Column(Float, nullable=False)
    boundary_hit = Column(Boolean, default=False)
    iterations = Column(Integer, default=0)
    converged = Column(Boolean, default=True)
    created_at = Column(DateTime, default=datetime.datetime.utcnow)

    # Relationship with CalibrationIterate
    iterates = relationship("CalibrationIterate", back_populates="run", cascade="all, delete-orphan",
                            order_by="CalibrationIterate.index")

    @property
    def peclet(self):
        if self.dimension == 1:
            return (self.peclet_x,)
        return (self.peclet_x, self.peclet_y)

    def __repr__(self):
        return f"<CalibrationRun {self.kind} P{self.degree} Pe={self.peclet} phi={self.phi:.6g}>"


class CalibrationIterate(Base):
    __tablename__ = "calibration_iterates"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("calibration_runs.id"))
    index = Column(Integer, nullable=False)
    tau = Column(Float, nullable=False)
    j = Column(Float, nullable=False)
    dj = Column(Float, nullable=True)  # empty for derivative-free iterates
    d2j = Column(Float, nullable=True)

    # Relationship with CalibrationRun
    run = relationship("CalibrationRun", back_populates="iterates")

    def __repr__(self):
        return f"<CalibrationIterate {self.run_id}#{self.index} tau={self.tau:.6g}>"


class BenchmarkRecord(Base):
    __tablename__ = "benchmark_records"

    id = Column(Integer, primary_key=True, index=True)
    suite = Column(String, nullable=False, index=True)
    formula = Column(String, nullable=False)
    degree = Column(Integer, nullable=False)
    param1 = Column(String, nullable=False)
    param2 = Column(String, nullable=True)
    l2 = Column(Float, nullable=False)
    linf = Column(Float, nullable=False)
    created_at = Column(DateTime, default=datetime.datetime.utcnow)

    def __repr__(self):
        return f"<BenchmarkRecord {self.suite} {self.formula} P{self.degree} {self.param1}/{self.param2}>"
