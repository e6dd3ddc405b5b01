"""Pytest configuration and shared fixtures for qvol tests."""

import os
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from qvol.services.partitions import ModularData


def pytest_collection_modifyitems(config, items):
    """Skip the long Monte Carlo runs unless QVOL_SLOW=1."""
    if os.environ.get("QVOL_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; set QVOL_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="module")
def temp_runs_dir():
    """Create a temporary runs directory for a test module.

    The directory persists for the whole module so tests can share run
    output while staying isolated from the production data directory.
    """
    temp_dir = tempfile.mkdtemp(prefix="qvol_test_runs_")
    yield Path(temp_dir)
    shutil.rmtree(temp_dir, ignore_errors=True)


@pytest.fixture(autouse=True)
def isolate_runs_dir(temp_runs_dir, monkeypatch):
    """Point RUNS_DIR at the temporary directory for every test."""
    monkeypatch.setattr("qvol.config.RUNS_DIR", temp_runs_dir)
    # run.py imports the constant at module load time
    monkeypatch.setattr("qvol.run.RUNS_DIR", temp_runs_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_q():
    """N = 2 with q = 0.1, where the 5 x 5 box truncation is accurate."""
    return ModularData(1e-4, 2, 1.3)
