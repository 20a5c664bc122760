from functools import lru_cache

from sqlalchemy import Engine
from sqlmodel import SQLModel, create_engine, Session

# Import the table models so they are registered on the metadata
from app.models import RunRecord  # noqa: F401


@lru_cache(maxsize=None)
def get_engine(url: str) -> Engine:
    return create_engine(url)


def create_tables(engine: Engine):
    SQLModel.metadata.create_all(engine)


def get_session(engine: Engine):
    return Session(engine)


def reset_db(engine: Engine):
    """Wipe all tables in the ledger. Use with caution - for testing only!"""
    SQLModel.metadata.drop_all(engine)
    SQLModel.metadata.create_all(engine)
