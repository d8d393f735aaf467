from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker
import os
import sys

# Add parent directory to path to import config
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(__file__))))
from config import DATABASE_URL

# Create the SQLAlchemy engine
engine = create_engine(DATABASE_URL)

# Create a session factory
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

# Base class for all ledger models
Base = declarative_base()


def get_db():
    """
    Yield a session on the configured ledger and close it afterwards
    """
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def init_db(bind=None):
    """
    Initialize the ledger by creating all tables
    """
    Base.metadata.create_all(bind=bind or engine)


def session_for(url: str):
    """
    Session on a ledger other than the configured one (e.g. the --db flag of build-table).
    Tables are created on first use.
    """
    other = create_engine(url)
    init_db(other)
    return sessionmaker(autocommit=False, autoflush=False, bind=other)()
