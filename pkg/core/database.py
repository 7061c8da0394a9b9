"""Run registry database setup using SQLAlchemy.

Provides Base class for models and session management.
"""

from contextlib import contextmanager
from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker
from typing import Iterator, Optional
import logging

logger = logging.getLogger(__name__)

# Declarative base of the registry models
Base = declarative_base()

# Global session maker
_session_maker: Optional[sessionmaker] = None
_engine: Optional[Engine] = None


def init_database(database_url: str) -> None:
    """Initialize database engine and session maker.

    Args:
        database_url: SQLAlchemy database URL (e.g., 'sqlite:///runs.db')
    """
    global _session_maker, _engine

    logger.info(f"Initializing run registry with URL: {database_url}")

    _engine = create_engine(
        database_url,
        echo=False,  # Set to True for SQL query debugging
        future=True,
    )

    _session_maker = sessionmaker(
        _engine,
        class_=Session,
        expire_on_commit=False,
    )

    logger.info("Run registry initialized successfully")


def is_initialized() -> bool:
    """Whether init_database() has been called (and not closed)."""
    return _engine is not None


def create_tables() -> None:
    """Create the registry tables (runs, codebook_versions) if missing.

    Safe to call on every first registry write.
    """
    if _engine is None:
        raise RuntimeError("Database not initialized. Call init_database() first.")

    logger.info("Creating run registry tables...")
    Base.metadata.create_all(_engine)
    logger.info("Run registry tables created successfully")


@contextmanager
def get_session() -> Iterator[Session]:
    """Get database session for one unit of work.

    Yields:
        Session: Database session

    Example:
        with get_session() as session:
            session.add(record)
    """
    if _session_maker is None:
        raise RuntimeError("Database not initialized. Call init_database() first.")

    session = _session_maker()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()


def close_database() -> None:
    """Dispose of the registry engine.

    Called by main() on exit; a later record_run() re-initializes it.
    """
    global _engine, _session_maker

    if _engine is None:
        return

    logger.info("Closing run registry connection...")
    _engine.dispose()
    _engine = None
    _session_maker = None
    logger.info("Run registry connection closed")
