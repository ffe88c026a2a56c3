import math

import pytest

from app.core.exceptions import ValidationException
from app.services.catalog import catalog, catalog_names
from app.services.coeff_dsl import eval_drift


def test_catalog_names():
    assert set(catalog_names()) == {"polynomial_drift", "oscillating_drift", "langevin_tempered"}


def test_polynomial_drift_dimension():
    m = catalog("polynomial_drift", {"d": 3, "kappa": 3})
    assert (m.d, m.n, m.r0) == (3, 3, 1.0)
    # b(x) = -K x |x|^(κ-1)，|x| = 2
    assert eval_drift(m, [2.0, 0.0, 0.0])[0] == pytest.approx(-16.0)


def test_oscillating_drift_values():
    m = catalog("oscillating_drift", {"rho": 1.5, "kappa": 3})
    x = 2.0
    expected = -x * x ** 2 * (math.cos(x) + 1.5)
    assert eval_drift(m, [x])[0] == pytest.approx(expected)


def test_oscillating_drift_is_one_dimensional():
    with pytest.raises(ValidationException):
        catalog("oscillating_drift", {"d": 2})


def test_unknown_model_and_parameter():
    with pytest.raises(ValidationException):
        catalog("nope")
    with pytest.raises(ValidationException):
        catalog("polynomial_drift", {"rho": 1.0})
    with pytest.raises(ValidationException):
        catalog("polynomial_drift", {"d": 1.5})


def test_out_of_range_parameters_still_build():
    m = catalog("polynomial_drift", {"kappa": 1.0})
    assert m.params["kappa"] == 1.0
