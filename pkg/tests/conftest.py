import os

import numpy as np
import pytest

from config import Config
from utils import database
from utils.field_io import RunDirectory
from utils.grid_fields import GridShape

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid8():
    return GridShape(8, 8)


@pytest.fixture
def run_dir(tmp_path):
    return RunDirectory(str(tmp_path / "run"))


@pytest.fixture(autouse=True)
def isolated_database(tmp_path, monkeypatch):
    """Every test gets its own registry file and a fresh singleton"""
    monkeypatch.setattr(Config, "DATABASE_PATH", str(tmp_path / "registry" / "runs.db"))
    monkeypatch.setattr(database, "_db_manager", None)
    yield


@pytest.fixture
def config_path():
    """Path of a shipped run configuration"""
    return lambda name: os.path.join(CONFIG_DIR, name)
