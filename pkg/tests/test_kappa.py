import numpy as np
import pytest

from regfrontier.hedonic import RankDeficiencyError
from regfrontier.kappa import PeriodEffects, UnidentifiedError, existing_home_sales, fit_kappa_T


def test_paper_ratio_arithmetic():
    delta = 0.0005 / 0.311
    assert round(delta, 4) == 0.0016
    pe = PeriodEffects.fixed(delta / (1 + delta))
    assert pe.delta == pytest.approx(delta)
    assert round(pe.kappa_T, 4) == 0.0016


@pytest.mark.parametrize("delta", [0.0, 0.05])
def test_recovery_within_two_se(delta):
    df = existing_home_sales(3000, 4, delta, seed=11)
    pe = fit_kappa_T(df)
    assert abs(pe.delta - delta) < 2 * pe.se_delta
    assert pe.kappa_T == pytest.approx(pe.delta / (1 + pe.delta), abs=1e-15)
    assert pe.se_kappa_T == pytest.approx(pe.se_delta / (1 + pe.delta) ** 2)


def test_period_coefficients_recovered():
    df = existing_home_sales(3000, 4, 0.02, gamma1=-0.034, coef_t2=0.311, seed=3)
    pe = fit_kappa_T(df)
    assert pe.gamma2 == pytest.approx(0.00311, rel=0.05)
    assert pe.alpha1 == pytest.approx(0.0012, abs=0.01)


def test_linear_period_effects_unidentified():
    df = existing_home_sales(500, 4, 0.05, coef_t2=0.0, noise=1e-12, seed=0)
    with pytest.raises(UnidentifiedError):
        fit_kappa_T(df)


def test_single_sale_parcels_rank_deficient():
    df = existing_home_sales(200, 1, 0.0, seed=0)
    with pytest.raises(RankDeficiencyError):
        fit_kappa_T(df)


def test_deflator_definition_and_origin():
    pe = PeriodEffects.fixed(0.1, gamma1=0.02, gamma2=0.001, origin=2000.0)
    t_i, t_j = 2010.0, 2004.0
    g = lambda t: 0.02 * (t - 2000) + 0.001 * (t - 2000) ** 2
    assert pe.deflator(t_i, t_j) == pytest.approx(np.exp(g(t_i) - g(t_j)))
    assert pe.deflator(t_i, t_i) == 1.0


def test_json_round_trip(tmp_path):
    pe = fit_kappa_T(existing_home_sales(400, 3, 0.05, seed=1), origin=1990.0)
    pe.to_json(tmp_path / "k.json")
    assert PeriodEffects.from_json(tmp_path / "k.json") == pe
