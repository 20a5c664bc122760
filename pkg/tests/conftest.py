from typing import Generator

import numpy as np
import pytest
from sqlalchemy import Engine

from app.database import get_engine, reset_db
from app.forms6 import standard_omega
from app.hitchin import HitchinData, build, random_positive_form
from app.startup import startup


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


@pytest.fixture
def random_point(rng: np.random.Generator) -> HitchinData:
    """Type IIA point for the standard omega in a random symplectic frame."""
    return build(random_positive_form(rng), standard_omega())


@pytest.fixture
def ledger(tmp_path) -> Generator[Engine, None, None]:
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    engine = startup(url)
    yield engine
    reset_db(engine)
    get_engine.cache_clear()
    engine.dispose()
