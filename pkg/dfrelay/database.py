"""
Database configuration and session management for verification history.
"""
import logging
from contextlib import contextmanager
from typing import Iterator, Optional

from sqlalchemy.engine import Engine
from sqlmodel import SQLModel, create_engine, Session

from dfrelay.config import DATABASE_URL

logger = logging.getLogger(__name__)

_engine: Optional[Engine] = None


def get_engine(url: Optional[str] = None) -> Engine:
    """Engine for the configured URL; created lazily so imports stay side-effect free."""
    global _engine
    if url is not None:
        return create_engine(url, echo=False)
    if _engine is None:
        _engine = create_engine(DATABASE_URL, echo=False)
    return _engine


def create_db_and_tables(engine: Optional[Engine] = None) -> None:
    """Create the verification history tables."""
    engine = engine or get_engine()
    SQLModel.metadata.create_all(engine)
    logger.info(f"✅ Verification tables ready at {engine.url}")


@contextmanager
def get_session(engine: Optional[Engine] = None) -> Iterator[Session]:
    """Session bound to the engine, closed on exit."""
    with Session(engine or get_engine()) as session:
        yield session
