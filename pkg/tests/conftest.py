import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
sys.path.insert(0, str(Path(__file__).resolve().parent))

from app.core.config import settings  # noqa: E402
from app.services.catalog import catalog  # noqa: E402
from app.services.certify import certify_model  # noqa: E402
from app.services.coeff_dsl import build_model  # noqa: E402


@pytest.fixture(autouse=True)
def _log_to_tmp(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "LOG_FILE", str(tmp_path / "logs" / "ergocert.log"))


@pytest.fixture(scope="session")
def poly_model():
    """dX = -X|X| dt + dB"""
    return catalog("polynomial_drift", {"K": 1.0, "kappa": 2.0})


@pytest.fixture(scope="session")
def ou_model():
    return catalog("polynomial_drift", {"K": 1.0, "kappa": 1.0})


@pytest.fixture(scope="session")
def tempered_model():
    """σ = |x|^1.5，b = -x|x|，r0 = 2"""
    return catalog("langevin_tempered", {"alpha": 0.2, "beta": 0.3, "c": 1.0})


@pytest.fixture(scope="session")
def brownian3():
    return build_model("bm3", 3, 3, [0.0, 0.0, 0.0], 1.0, {}, ["0", "0", "0"],
                       [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])


@pytest.fixture(scope="session")
def tempered_certified(tempered_model):
    return certify_model(tempered_model, nodes=256)


@pytest.fixture(scope="session")
def poly_certified(poly_model):
    return certify_model(poly_model, nodes=512)
