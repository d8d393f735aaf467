"""
Database module: SQLAlchemy ledger of calibration runs and benchmark results
"""

from src.database.connection import Base, engine, get_db, init_db
from src.database.models import CalibrationRun, CalibrationIterate, BenchmarkRecord
