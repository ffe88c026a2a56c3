import numpy as np
import pytest

from app.schemas.certificate import Verdict
from app.services.catalog import catalog
from app.services.certify import certify_model, compute_lambda, constant_c1
from app.services.radial import build_profile
from oracles import lambda_log_riemann, polynomial_lambda


def test_constant_c1():
    assert constant_c1(0.125) == pytest.approx(4.0 / 9.0)
    assert constant_c1(0.0) == pytest.approx(0.5)


def test_tempered_langevin_certificate(tempered_certified):
    cert, p = tempered_certified
    assert cert.verdict == Verdict.FINITE
    assert cert.lambda_est == pytest.approx(0.125, rel=1e-3)
    assert cert.c1 == pytest.approx(4.0 / 9.0, rel=1e-3)
    assert cert.r1 == pytest.approx(4.0)
    assert cert.c2 is not None and cert.c2 >= 0.0
    assert len(cert.c2_witness) == 1
    assert abs(cert.c2_witness[0]) <= cert.r1 + 1e-12
    assert cert.tail_outer.kind == "power"
    assert cert.profile_checksum == p.checksum()
    assert cert.Rmax == pytest.approx(p.Rmax)


def test_polynomial_drift_certificate_matches_oracle(poly_certified):
    cert, _ = poly_certified
    assert cert.verdict == Verdict.FINITE
    assert cert.lambda_est == pytest.approx(polynomial_lambda(1.0, 2.0), rel=5e-4)
    assert cert.rel_err_est <= 1e-4


def test_partial_sums_do_not_decrease(poly_certified):
    cert, _ = poly_certified
    partial = np.array(cert.partial_history)
    assert np.all(np.diff(partial) >= -1e-12 * partial[:-1])


def test_ornstein_uhlenbeck_is_infinite(ou_model):
    cert, _ = certify_model(ou_model, nodes=256)
    assert cert.verdict == Verdict.INFINITE
    assert cert.lambda_est is None
    assert cert.lambda_infinite
    assert cert.c1 is None


def test_slow_tempering_is_infinite():
    m = catalog("langevin_tempered", {"alpha": 0.3, "beta": 0.25})
    cert, _ = certify_model(m, nodes=256)
    assert cert.verdict == Verdict.INFINITE


def test_too_few_doublings_is_inconclusive(poly_model):
    p = build_profile(poly_model, 8.0, 256)
    cert, _ = compute_lambda(poly_model, p, max_doublings=0)
    assert cert.verdict == Verdict.INCONCLUSIVE
    assert cert.c1 is None


def test_config_echo(tempered_certified):
    cert, _ = tempered_certified
    assert cert.config["nodes"] == 256
    assert cert.config["tol"] == pytest.approx(1e-4)
    assert "sphere" in cert.config
    assert cert.config["r1"] == pytest.approx(4.0)


@pytest.mark.slow
def test_oscillating_drift_against_log_riemann():
    K, kappa, rho = 1.0, 3.0, 1.5
    m = catalog("oscillating_drift", {"K": K, "kappa": kappa, "rho": rho})
    cert, _ = certify_model(m, nodes=1024)
    assert cert.verdict == Verdict.FINITE

    def iota(r):
        return -2.0 * K * r ** (kappa + 1.0) * (np.cos(r) + rho)

    reference = lambda_log_riemann(lambda r: np.ones_like(r), iota, 1.0, cert.Rmax)
    assert cert.partial_history[-1] == pytest.approx(reference, rel=1e-3)


@pytest.mark.slow
def test_oscillating_drift_without_margin_is_not_finite():
    m = catalog("oscillating_drift", {"K": 1.0, "kappa": 3.0, "rho": 0.5})
    cert, _ = certify_model(m, nodes=512, with_constants=False)
    assert cert.verdict != Verdict.FINITE
