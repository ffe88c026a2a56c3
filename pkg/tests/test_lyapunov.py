import dataclasses

import numpy as np
import pytest
from scipy import integrate

from app.core.exceptions import CertificateRefused, PreconditionError
from app.schemas.certificate import Verdict
from app.services.catalog import catalog
from app.services.certify import certify_model, constant_c1, lyapunov_constants
from app.services.lyapunov import (
    apply_generator,
    build_lyapunov,
    drift_check,
    escape_bound,
    radial_generator,
)
from oracles import polynomial_outer_integrand


@pytest.fixture(scope="module")
def tempered_lyapunov(tempered_certified):
    cert, p = tempered_certified
    return build_lyapunov(p, cert)


@pytest.fixture(scope="module")
def poly_lyapunov(poly_certified):
    cert, p = poly_certified
    return build_lyapunov(p, cert)


def test_tempered_lbar_closed_form(tempered_lyapunov):
    # F(u) = u^{-2}/4，L̄(r) = (1/2 - 1/r)/4
    L = tempered_lyapunov
    assert float(L.lbar_at(2.0)) == pytest.approx(0.0, abs=1e-12)
    assert float(L.lbar_at(4.0)) == pytest.approx(0.0625, rel=1e-4)
    assert float(L.lbar_at(8.0)) == pytest.approx((0.5 - 0.125) / 4.0, rel=1e-4)


def test_lbar_outside_table_rejected(tempered_lyapunov):
    with pytest.raises(PreconditionError):
        tempered_lyapunov.lbar_at(1.0)
    with pytest.raises(PreconditionError):
        tempered_lyapunov.lbar_at(10 * tempered_lyapunov.Rmax)


def test_polynomial_lbar_matches_quadrature(poly_lyapunov):
    expected, _ = integrate.quad(lambda u: polynomial_outer_integrand(u, 1.0, 2.0), 1.0, 3.0)
    assert float(poly_lyapunov.lbar_at(3.0)) == pytest.approx(expected, rel=1e-5)


def test_radial_identity_matches_generator(tempered_model, tempered_lyapunov):
    X = np.array([[5.0], [-7.0], [20.0], [4.5]])
    direct = apply_generator(tempered_model, tempered_lyapunov, X)
    radial = radial_generator(tempered_lyapunov, tempered_model, X)
    np.testing.assert_allclose(direct, radial, rtol=1e-9, atol=1e-12)
    # 一维时 C = γ，外部生成元恒为 -1/2
    np.testing.assert_allclose(direct, -0.5, atol=1e-3)


def test_radial_identity_requires_exterior(tempered_model, tempered_lyapunov):
    with pytest.raises(PreconditionError):
        radial_generator(tempered_lyapunov, tempered_model, np.array([[1.0]]))


class QuarticField:
    """f(x) = 1 + |x|⁴/4"""

    def value(self, X):
        return 1.0 + 0.25 * np.sum(X ** 2, axis=-1) ** 2

    def value_grad_hess(self, X):
        s = np.sum(X ** 2, axis=1)
        d = X.shape[1]
        grad = s[:, None] * X
        hess = s[:, None, None] * np.eye(d)[None] + 2.0 * np.einsum("ki,kj->kij", X, X)
        return self.value(X), grad, hess


def _central_difference_generator(m, f, x):
    d = x.size
    h = 1e-5 * (1.0 + np.linalg.norm(x))
    E = h * np.eye(d)
    grad = np.array([(f.value(x + E[i]) - f.value(x - E[i])) / (2 * h) for i in range(d)])
    hess = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            hess[i, j] = (f.value(x + E[i] + E[j]) - f.value(x + E[i] - E[j])
                          - f.value(x - E[i] + E[j]) + f.value(x - E[i] - E[j])) / (4 * h * h)
    b = m.drift_at(x[None, :])[0]
    sigma = m.diffusion_at(x[None, :])[0]
    return float(b @ grad + 0.5 * np.sum((sigma @ sigma.T) * hess))


@pytest.mark.parametrize("name, params", [
    ("polynomial_drift", {"K": 1.0, "kappa": 2.0}),
    ("polynomial_drift", {"K": 1.0, "kappa": 1.5, "d": 3}),
    ("oscillating_drift", {"K": 1.0, "kappa": 2.0, "rho": 1.5}),
    ("langevin_tempered", {"alpha": 0.2, "beta": 0.3, "c": 1.0}),
])
def test_generator_matches_central_differences(name, params):
    m = catalog(name, params)
    rng = np.random.default_rng(11)
    directions = rng.standard_normal((100, m.d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    X = rng.uniform(2.0, 6.0, 100)[:, None] * directions
    f = QuarticField()
    exact = apply_generator(m, f, X)
    approx = np.array([_central_difference_generator(m, f, x) for x in X])
    np.testing.assert_allclose(approx, exact, rtol=1e-5)


def test_blend_is_c2_at_r1(tempered_lyapunov):
    L = tempered_lyapunov
    below = L.radial(L.r1 * (1 - 1e-9))
    above = L.radial(L.r1 * (1 + 1e-9))
    for lo, hi in zip(below[:3], above[:3]):
        assert float(lo[0]) == pytest.approx(float(hi[0]), rel=1e-6, abs=1e-8)


def test_lyapunov_is_at_least_one(tempered_lyapunov):
    r = np.linspace(0.0, tempered_lyapunov.Rmax, 4001)
    phi = tempered_lyapunov.radial(r)[0]
    assert np.all(phi >= 1.0 - 1e-12)
    assert float(tempered_lyapunov.radial(0.0)[1][0]) == 0.0


def test_gradient_vanishes_at_center(tempered_model, tempered_lyapunov):
    _, grad, hess = tempered_lyapunov.value_grad_hess(np.array([[0.0]]))
    assert grad[0, 0] == 0.0
    assert np.isfinite(hess).all()


def test_to_frame_generator_bound(tempered_lyapunov):
    frame = tempered_lyapunov.to_frame()
    assert list(frame.columns) == ["r", "lbar", "lbar1", "lbar2", "radial_generator_bound"]
    np.testing.assert_allclose(frame["radial_generator_bound"], -0.5, rtol=1e-9)


@pytest.mark.parametrize("fixture", ["tempered", "poly"])
def test_drift_check_passes(request, fixture):
    m = request.getfixturevalue(f"{fixture}_model")
    cert, _ = request.getfixturevalue(f"{fixture}_certified")
    L = request.getfixturevalue(f"{fixture}_lyapunov")
    report = drift_check(m, L, cert.c1, cert.c2, n_samples=10000)
    assert report.passed
    assert report.max_violation <= 1e-6
    assert report.n_samples == 10001
    assert report.n_inside >= 1
    assert report.max_exterior_generator <= -0.5 + 1e-3


def test_drift_check_fails_without_c2(tempered_model, tempered_certified, tempered_lyapunov):
    cert, _ = tempered_certified
    report = drift_check(tempered_model, tempered_lyapunov, cert.c1, -1.0, n_samples=500)
    assert not report.passed
    assert report.max_violation > 0
    assert np.linalg.norm(report.witness_x) <= report.r1 + 1e-12


def test_certificate_records_offset(tempered_certified, tempered_lyapunov):
    cert, _ = tempered_certified
    assert cert.lyapunov_offset == tempered_lyapunov.offset == 1.0
    assert cert.c1 == pytest.approx(constant_c1(cert.lambda_est, cert.lyapunov_offset))


def test_raised_offset_lowers_c1(tempered_model, tempered_certified, tempered_lyapunov):
    cert, _ = tempered_certified
    raised = dataclasses.replace(tempered_lyapunov, offset=3.0)
    c1, c2, _ = lyapunov_constants(cert, tempered_model, raised)
    assert c1 == pytest.approx(1.0 / (2.0 * (cert.lambda_est + 3.0)))
    assert drift_check(tempered_model, raised, c1, c2, n_samples=2000).passed
    # c1 = 1/(2(Λ+1)) 时外部 c1 L > 1/2
    stale = drift_check(tempered_model, raised, constant_c1(cert.lambda_est), c2, n_samples=2000)
    assert not stale.passed


def test_offset_below_one_rejected():
    with pytest.raises(PreconditionError):
        constant_c1(0.125, offset=0.5)


def test_infinite_certificate_refused(ou_model):
    cert, p = certify_model(ou_model, nodes=256)
    assert cert.verdict == Verdict.INFINITE
    with pytest.raises(CertificateRefused):
        build_lyapunov(p, cert)


def test_r1_must_lie_inside_table(tempered_certified):
    cert, p = tempered_certified
    with pytest.raises(PreconditionError):
        build_lyapunov(p, cert, r1=1.0)


def test_escape_bound_brownian_three_dimensions(brownian3):
    # ∫_{1/2}^r u^{-2} du 的比值
    x = [4.0, 0.0, 0.0]
    assert escape_bound(brownian3, x, eps=0.5) == pytest.approx(0.875, rel=1e-5)
    truncated = escape_bound(brownian3, x, eps=0.5, Rcap=16.0, truncate=True)
    assert truncated == pytest.approx(0.875 / 0.96875, rel=1e-5)


def test_escape_bound_zero_for_recurrent_model(poly_model):
    assert escape_bound(poly_model, [3.0]) == 0.0


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1])
def test_escape_bound_eps_range(brownian3, eps):
    with pytest.raises(PreconditionError):
        escape_bound(brownian3, [4.0, 0.0, 0.0], eps=eps)


def test_escape_bound_start_inside_ball(brownian3):
    with pytest.raises(PreconditionError):
        escape_bound(brownian3, [0.1, 0.0, 0.0], eps=0.5)
