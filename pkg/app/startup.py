from sqlalchemy import Engine

from app.database import create_tables, get_engine


def startup(url: str) -> Engine:
    # called once before the first ledger write
    engine = get_engine(url)
    create_tables(engine)
    return engine
