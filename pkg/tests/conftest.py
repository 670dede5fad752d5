import json
from pathlib import Path

import numpy as np
import pytest

import bsumkit
from bsumkit.engine import StopCriteria

PACKAGE_DIR = Path(bsumkit.__file__).parent


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def lasso_data():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((30, 40)) / np.sqrt(30)
    truth = np.zeros(40)
    truth[[3, 11, 25, 31]] = [1.5, -2.0, 0.7, 1.1]
    b = A @ truth + 0.01 * rng.standard_normal(30)
    lam = 0.1 * float(np.abs(A.T @ b).max())
    return A, b, lam


@pytest.fixture
def configs_dir():
    return PACKAGE_DIR / "configs"


@pytest.fixture
def data_dir():
    return PACKAGE_DIR / "data"


@pytest.fixture
def write_config(tmp_path):
    """Write a config dict (or raw text) to a JSON file in tmp_path."""

    def _write(content, name="config.json"):
        path = tmp_path / name
        path.write_text(content if isinstance(content, str) else json.dumps(content, indent=2))
        return path

    return _write


def no_tolerances(max_iters):
    return StopCriteria(max_iters=max_iters, objective_rel_change_tol=None, stationarity_tol=None)
