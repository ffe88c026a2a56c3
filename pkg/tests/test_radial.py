import numpy as np
import pytest

from app.core.exceptions import AssumptionViolation, PreconditionError
from app.schemas.radial import SphereOptConfig
from app.services.coeff_dsl import build_model
from app.services.radial import (
    build_profile,
    coeff_A,
    coeff_B,
    coeff_C,
    extend_profile,
    functionals,
    gamma_at,
    iota_at,
    sphere_directions,
)


@pytest.fixture(scope="module")
def anisotropic():
    """b = 0，σ = diag(1, 2)：C 在 e1 方向取最小值 1，在 e2 方向取最大值 4"""
    return build_model("aniso", 2, 2, [0.0, 0.0], 1.0, {}, ["0", "0"], [["1", "0"], ["0", "2"]])


def test_pointwise_functionals(poly_model, tempered_model):
    assert coeff_A(tempered_model, [2.0]) == pytest.approx(4.0)
    assert coeff_B(poly_model, [2.0]) == pytest.approx(-8.0)
    assert coeff_C(tempered_model, [-2.0]) == pytest.approx(8.0)


def test_sphere_extrema_closed_forms(poly_model, tempered_model):
    assert gamma_at(tempered_model, 2.0) == pytest.approx(8.0)
    assert iota_at(poly_model, 2.0) == pytest.approx(-16.0)
    assert iota_at(tempered_model, 5.0) == pytest.approx(-2.0)
    m = build_model("quad_noise", 1, 1, [0.0], 1.0, {}, ["-x1"], [["1 + x1^2"]])
    assert gamma_at(m, 2.0) == pytest.approx(25.0)


def test_sphere_search_in_two_dimensions(anisotropic):
    assert gamma_at(anisotropic, 3.0) == pytest.approx(1.0, abs=1e-6)
    assert iota_at(anisotropic, 3.0) == pytest.approx(4.0, abs=1e-5)


def test_radius_below_r0_is_rejected(poly_model):
    with pytest.raises(PreconditionError):
        gamma_at(poly_model, 0.5)
    assert gamma_at(poly_model, 0.5, r_min=0.25) == pytest.approx(1.0)


def test_functionals_undefined_at_center(poly_model):
    with pytest.raises(PreconditionError):
        functionals(poly_model, np.zeros((1, 1)))


def test_directions_are_deterministic_unit_vectors():
    U = sphere_directions(3, 64, 7)
    assert U.shape == (64, 3)
    assert np.allclose(np.linalg.norm(U, axis=1), 1.0)
    assert np.array_equal(U, sphere_directions(3, 64, 7))
    assert np.array_equal(sphere_directions(1, 64, 7), np.array([[-1.0], [1.0]]))


def test_profile_integral_of_iota(poly_model):
    p = build_profile(poly_model, 8.0, 1024)
    assert p.I[0] == 0.0
    assert p.grid[0] == pytest.approx(1.0)
    assert p.Rmax == pytest.approx(8.0)
    assert np.allclose(np.diff(np.log(p.grid)), p.h)
    # I(r) = -2(r³ - 1)/3
    assert float(p.I_at(2.0)) == pytest.approx(-14.0 / 3.0, rel=1e-6)
    assert float(p.gamma_interp(3.3)) == pytest.approx(1.0)


def test_profile_extension_reuses_nodes(poly_model):
    p = build_profile(poly_model, 8.0, 64)
    q = extend_profile(p, poly_model, 16.0)
    assert q.Rmax >= 16.0 * (1 - 1e-12)
    assert np.array_equal(q.grid[:p.M], p.grid)
    assert np.array_equal(q.gamma[:p.M], p.gamma)
    assert np.array_equal(q.I[:p.M], p.I)
    assert extend_profile(q, poly_model, 10.0) is q


def test_profile_independent_of_workers(anisotropic):
    cfg = SphereOptConfig(n_samples=64)
    a = build_profile(anisotropic, 8.0, 200, cfg, workers=1)
    b = build_profile(anisotropic, 8.0, 200, cfg, workers=4)
    assert a.checksum() == b.checksum()


def test_profile_grid_validation(poly_model):
    with pytest.raises(PreconditionError):
        build_profile(poly_model, 8.0, 8)
    with pytest.raises(PreconditionError):
        build_profile(poly_model, 0.5, 64)


def test_degenerate_diffusion_is_an_assumption_violation():
    m = build_model("no_noise", 1, 1, [0.0], 1.0, {}, ["-x1"], [["0"]])
    with pytest.raises(AssumptionViolation) as exc:
        build_profile(m, 8.0, 64)
    assert exc.value.assumption == "A5"
    assert len(exc.value.witness) == 1
