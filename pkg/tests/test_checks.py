import numpy as np
import pytest

from app.core.exceptions import PreconditionError
from app.schemas.assumption import AssumptionStatus
from app.services.checks import (
    check_all,
    check_ellipticity,
    check_growth,
    check_local_bound,
    check_onesided,
    replay_witness,
)
from app.services.coeff_dsl import build_model


def test_local_bound_singular_drift():
    m = build_model("pole", 1, 1, [0.0], 1.0, {}, ["1/x1"], [["1"]])
    report = check_local_bound(m, 2.0, N=256)
    assert report.status == AssumptionStatus.VIOLATED
    assert report.witness.kind == "nonfinite"
    assert report.witness.points == [[0.0]]
    assert replay_witness(m, report)[0]


def test_local_bound_reports_constant(poly_model):
    report = check_local_bound(poly_model, 2.0, N=256)
    assert report.status == AssumptionStatus.NOT_FALSIFIED
    assert report.constants["bound"] <= 2.0 ** 2 + 1.0 + 1e-9
    assert report.n_samples == 258


def test_local_bound_radius_positive(poly_model):
    with pytest.raises(PreconditionError):
        check_local_bound(poly_model, 0.0)


def test_growth_outward_cubic_drift():
    m = build_model("explode", 1, 1, [0.0], 1.0, {}, ["x1^3"], [["1"]])
    report = check_growth(m, N=512)
    assert report.status == AssumptionStatus.VIOLATED
    assert report.witness.kind == "growth"
    assert report.constants["slope"] > 1.5
    violated, margin = replay_witness(m, report)
    assert violated and margin > 0


def test_growth_inward_drift(poly_model):
    report = check_growth(poly_model, N=512)
    assert report.status == AssumptionStatus.NOT_FALSIFIED
    assert len(report.table) == 8
    assert report.table[-1]["gamma_hat"] >= report.table[0]["gamma_hat"]


def test_onesided_holder_noise():
    m = build_model("root_noise", 1, 1, [0.0], 1.0, {}, ["0"], [["|x1|^0.25"]])
    report = check_onesided(m, N_pairs=2048)
    assert report.status == AssumptionStatus.VIOLATED
    assert report.witness.kind == "onesided"
    assert len(report.witness.points) == 10


def test_onesided_monotone_drift(poly_model):
    report = check_onesided(poly_model, N_pairs=1024)
    assert report.status == AssumptionStatus.NOT_FALSIFIED
    assert report.constants["gamma_hat"] <= 0.0


def test_ellipticity_degenerate_at_center(tempered_model):
    report = check_ellipticity(tempered_model, "ball", N=256)
    assert report.assumption == "A4"
    assert report.status == AssumptionStatus.VIOLATED
    assert report.witness.kind == "eigen"
    assert report.witness.points == [[0.0]]
    violated, _ = replay_witness(tempered_model, report)
    assert violated


def test_ellipticity_exterior(tempered_model):
    report = check_ellipticity(tempered_model, "exterior", N=256)
    assert report.assumption == "A5"
    assert report.status == AssumptionStatus.NOT_FALSIFIED
    assert report.constants["delta_hat"] == pytest.approx(8.0, rel=1e-9)
    assert report.table


def test_ellipticity_holder_fit(poly_model):
    report = check_ellipticity(poly_model, "ball", N=256)
    assert report.status == AssumptionStatus.NOT_FALSIFIED
    assert report.constants["delta_hat"] == pytest.approx(1.0)
    assert 0.0 <= report.constants["holder_alpha_b"] <= 1.0


def test_ellipticity_unknown_region(poly_model):
    with pytest.raises(PreconditionError):
        check_ellipticity(poly_model, "shell")


def test_replay_requires_witness(poly_model):
    report = check_local_bound(poly_model, 1.0, N=64)
    with pytest.raises(PreconditionError):
        replay_witness(poly_model, report)


def test_check_all_order_and_determinism(poly_model):
    first = check_all(poly_model, N=512, seed=7)
    second = check_all(poly_model, N=512, seed=7, workers=2)
    assert [r.assumption for r in first] == ["A1", "A2", "A3", "A4", "A5"]
    assert all(r.status == AssumptionStatus.NOT_FALSIFIED for r in first)
    assert [r.model_dump() for r in first] == [r.model_dump() for r in second]


def test_check_all_flags_tempered_center(tempered_model):
    reports = {r.assumption: r for r in check_all(tempered_model, N=256)}
    assert reports["A4"].violated
    assert not reports["A5"].violated
    assert np.isfinite(reports["A1"].constants["bound"])
