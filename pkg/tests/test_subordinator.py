import numpy as np
import pytest
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import PreconditionError
from app.schemas.simulation import SimConfig, SubordinatorSpec
from app.services.subordinator import laplace_exponent, stable_variates, subordinate_tv, subordinator_paths
from app.services.tv import uniform_tv_curve


def test_stable_laplace_transform():
    rng = np.random.default_rng(4)
    S = stable_variates(0.5, 400000, rng)
    assert np.all(S >= 0)
    assert np.mean(np.exp(-S)) == pytest.approx(np.exp(-1.0), abs=0.005)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
def test_stable_index_range(alpha):
    with pytest.raises(PreconditionError):
        stable_variates(alpha, 10, np.random.default_rng(0))


def test_compound_poisson_mean():
    spec = SubordinatorSpec(kind="compound_poisson", jump_rate=2.0, jump_mean=0.5)
    cfg = SimConfig(dt=0.01, T=1.0, checkpoints=[0.5, 1.0], n_paths=20000, seed=8)
    S = subordinator_paths(spec, cfg)
    assert S.shape == (20000, 2)
    assert np.all(np.diff(S, axis=1) >= 0)
    assert S[:, 1].mean() == pytest.approx(1.0, abs=0.03)
    assert S[:, 0].mean() == pytest.approx(0.5, abs=0.03)


def test_laplace_exponent():
    stable = SubordinatorSpec(kind="stable", alpha_s=0.5)
    assert laplace_exponent(stable, 4.0) == pytest.approx(2.0)
    cp = SubordinatorSpec(kind="compound_poisson", jump_rate=2.0, jump_mean=0.5)
    assert laplace_exponent(cp, 2.0) == pytest.approx(2.0 * 0.5 * 2.0 / 2.0)
    mixed = SubordinatorSpec(kind="drift_compound", drift=1.5, jump_rate=2.0, jump_mean=0.5)
    assert laplace_exponent(mixed, 2.0) == pytest.approx(3.0 + 1.0)
    with pytest.raises(PreconditionError):
        laplace_exponent(stable, -1.0)


def test_parse_cli_form():
    assert SubordinatorSpec.parse("stable:0.5").alpha_s == 0.5
    cp = SubordinatorSpec.parse("compound_poisson:3,0.25")
    assert (cp.jump_rate, cp.jump_mean) == (3.0, 0.25)
    dc = SubordinatorSpec.parse("drift_compound:1,0,1")
    assert (dc.drift, dc.jump_rate, dc.jump_mean) == (1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        SubordinatorSpec.parse("gamma:1")


@pytest.mark.parametrize("text", ["stable:1.2", "stable", "compound_poisson:0,1", "drift_compound:0,0,1"])
def test_parse_rejects_invalid(text):
    with pytest.raises(ValidationError):
        SubordinatorSpec.parse(text)


def test_unit_drift_matches_plain_curve(ou_model):
    cfg = SimConfig(dt=0.05, T=1.0, checkpoints=[0.5, 1.0], n_paths=1500, seed=13)
    spec = SubordinatorSpec.parse("drift_compound:1,0,1")
    plain = uniform_tv_curve(ou_model, [[1.0], [-1.0]], [0.0], cfg)
    timed = subordinate_tv(ou_model, spec, [[1.0], [-1.0]], [0.0], cfg)
    assert np.array_equal(plain.tv, timed.tv)
    assert timed.metadata["n_capped"] == 0
    assert timed.metadata["mean_S"] == pytest.approx([0.5, 1.0])


def test_stable_time_change_metadata(ou_model):
    cfg = SimConfig(dt=0.05, T=1.0, checkpoints=[0.5, 1.0], n_paths=1200, seed=17)
    spec = SubordinatorSpec(kind="stable", alpha_s=0.5)
    curve = subordinate_tv(ou_model, spec, [[2.0]], [0.0], cfg)
    meta = curve.metadata
    assert meta["paired_subordinator"]
    assert meta["horizon_cap"] == pytest.approx(settings.SUBORDINATE_HORIZON_FACTOR * cfg.T)
    assert meta["n_capped"] > 0
    assert all(0 <= s <= meta["horizon_cap"] for s in meta["mean_S"])
    assert np.all((curve.sup_tv >= 0) & (curve.sup_tv <= 1))


@pytest.mark.slow
def test_stable_subordination_decays(poly_model):
    cfg = SimConfig(dt=0.01, T=4.0, checkpoints=[0.5, 1.0, 2.0, 4.0], n_paths=20000, seed=23)
    spec = SubordinatorSpec(kind="stable", alpha_s=0.5)
    starts = [[1.0], [-1.0], [3.0], [-3.0], [6.0], [-6.0]]
    curve = subordinate_tv(poly_model, spec, starts, [0.0], cfg)
    assert curve.monotone_excess(2.0) <= 0.0
