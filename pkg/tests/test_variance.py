import numpy as np
import pytest

from regfrontier.domain import HeightPanel, Panel
from regfrontier.frontier.estimate import HeightParams
from regfrontier.frontier.tn import solve_sigma_u, tn_variance
from regfrontier.synth import HeightShape, generate_panel, shape_from_counts
from regfrontier.variance import (estimate_variances, height_moments, smooth_series, smooth_variances,
                                  time_detrend)


def dated_panel(rng, n_b=200, J=5, trend=None, noise=0.1):
    building = np.repeat(np.arange(n_b), J)
    bloc = np.arange(n_b) // 2
    day = rng.uniform(0, 2000, len(building))
    y = np.zeros(len(building)) if trend is None else trend(day)
    y = y + rng.normal(0, noise, len(building)) if noise else y
    return Panel({3: HeightPanel(3, y, building, bloc, day=day)})


def test_constant_prices_degree_zero(rng):
    p = dated_panel(rng, noise=0.0)
    p = Panel({3: p[3].with_y(np.full(p[3].n_apartments, 8.7))})
    dt = time_detrend(p)
    assert dt.degree == 0
    assert np.all(dt.residuals[3].y == 0.0)


def test_cubic_trend_recovered(rng):
    cubic = lambda d: 1e-9 * (d - 1000) ** 3 - 2e-4 * d
    dt = time_detrend(dated_panel(rng, n_b=400, trend=cubic, noise=0.1))
    assert dt.degree >= 3
    assert np.var(dt.residuals[3].y) == pytest.approx(0.01, rel=0.05)
    assert dt.index(np.array([500.0]))[0] == pytest.approx(cubic(500.0), abs=0.02)


def test_detrend_order_invariant(rng):
    p = dated_panel(rng, trend=lambda d: 1e-4 * d)
    hp = p[3]
    perm = rng.permutation(hp.n_apartments)
    shuffled = HeightPanel(3, hp.y[perm], hp.building[perm], hp.bloc, day=hp.day[perm])
    a = time_detrend(p).residuals[3].y
    b = time_detrend(Panel({3: shuffled})).residuals[3].y
    np.testing.assert_allclose(b, a[perm], atol=1e-12)


def test_detrend_needs_enough_rows():
    hp = HeightPanel(1, np.zeros(4), np.array([0, 0, 1, 1]), np.array([0, 0]), day=np.arange(4.0))
    with pytest.raises(ValueError):
        time_detrend(Panel({1: hp}), max_degree=12)


def test_noise_free_panel_gives_zero():
    shape = HeightShape(np.repeat(np.arange(20), 2), np.full(40, 3))
    building = np.repeat(np.arange(40), 3)
    hp = HeightPanel(2, np.full(120, 8.0), building, shape.bloc)
    m = height_moments(hp, hp.y)
    assert m.var_v == 0 and m.var_w == pytest.approx(0, abs=1e-15) and m.var_u() == pytest.approx(0, abs=1e-15)


def test_recovery_at_thousand_blocs():
    truth = HeightParams(0.0, 0.6, 0.35, 0.10, 0.05)
    errs = []
    for seed in range(4):
        shape = {4: shape_from_counts(1000, 4000, 40_000, seed)}
        gp = generate_panel({4: truth}, shape, seed=seed)
        m = height_moments(gp.panel[4], gp.panel[4].y)
        errs.append([np.sqrt(m.var_v) / 0.10 - 1, np.sqrt(m.var_w) / 0.05 - 1,
                     m.var_u() / tn_variance(0.6, 0.35) - 1])
    assert np.all(np.abs(errs) < 0.05)


def test_paper_ratios_reproduced():
    su = 0.28
    truth = HeightParams(0.0, 1.9 * su, su, su / 2.5, su / 4)
    gp = generate_panel({5: truth}, {5: shape_from_counts(2000, 6000, 60_000, 1)}, seed=2)
    m = height_moments(gp.panel[5], gp.panel[5].y)
    s_u = float(solve_sigma_u(1.9 * su, m.var_u()))
    assert s_u / np.sqrt(m.var_w) == pytest.approx(4.0, rel=0.1)
    assert s_u / np.sqrt(m.var_v) == pytest.approx(2.5, rel=0.1)


def test_var_v_ignores_bloc_shifts(rng):
    gp = generate_panel({3: HeightParams(0, 0.5, 0.3, 0.1, 0.05)}, {3: shape_from_counts(50, 150, 900, 0)}, seed=0)
    hp = gp.panel[3]
    shift = rng.normal(size=hp.n_blocs)[hp.bloc][hp.building]
    assert height_moments(hp, hp.y + shift).var_v == pytest.approx(height_moments(hp, hp.y).var_v, rel=1e-12)


def test_decomposition_identity_balanced():
    # u constant, balanced shape: Var(y) ~ σ_v² + σ_w²
    truth = HeightParams(0.0, 0.5, 1e-12, 0.1, 0.08)
    shape = HeightShape(np.repeat(np.arange(500), 4), np.full(2000, 6))
    gp = generate_panel({2: truth}, {2: shape}, seed=3)
    m = height_moments(gp.panel[2], gp.panel[2].y)
    assert np.var(gp.panel[2].y, ddof=1) == pytest.approx(m.var_v + m.var_w, rel=0.05)


def test_absent_levels_are_flagged():
    # one building per bloc: no within-bloc dispersion for varW
    hp = HeightPanel(7, np.array([0.1, 0.3, 0.2, 0.5]), np.array([0, 0, 1, 1]), np.array([0, 1]))
    est = estimate_variances(Panel({7: hp}), Panel({7: hp}))
    assert np.isnan(est.varW[0])
    assert "varW_absent" in est.flags[7]


def test_smooth_flat_series_is_mean(rng):
    hs = np.arange(1, 11)
    vals = np.full(10, 0.04)
    fit, deg = smooth_series(hs, vals, np.arange(1, 11.0))
    assert deg == 0
    np.testing.assert_allclose(fit, 0.04)


def test_smooth_imputes_missing(rng):
    hs = np.arange(1, 13)
    truth = 0.01 + 0.001 * hs
    vals = truth.copy()
    vals[-3:] = np.nan
    fit, _ = smooth_series(hs, vals, np.ones(12))
    np.testing.assert_allclose(fit[-3:], truth[-3:], atol=1e-10)


def test_smooth_quadratic_within_three_se(rng):
    hs = np.arange(1, 21)
    truth = 0.02 + 0.002 * (hs - 8) ** 2 / 10
    dof = rng.integers(50, 3000, 20).astype(float)
    se = 0.01 / np.sqrt(dof)
    vals = truth + rng.normal(0, se)
    fit, deg = smooth_series(hs, vals, dof)
    assert deg >= 2
    assert np.max(np.abs(fit - truth)) < 3 * se.max()


def test_smoothing_needs_three_points():
    with pytest.raises(ValueError):
        smooth_series([1, 2, 3], [0.1, np.nan, np.nan], [1, 1, 1])


def test_smoothed_values_floored():
    hs = np.arange(1, 8)
    moments = {}
    panel = {}
    rng = np.random.default_rng(0)
    for h in hs:
        gp = generate_panel({int(h): HeightParams(0, 0.5, 0.3, 0.1, 0.05)},
                            {int(h): shape_from_counts(30, 90, 400, int(h))}, seed=int(h))
        panel[int(h)] = gp.panel[int(h)]
    p = Panel(panel)
    est = smooth_variances(estimate_variances(p, p), eps=0.5)  # absurd floor forces flags
    assert np.all(est.varV_smooth >= 0.5)
    assert all("varV_smooth_floored" in est.flags[int(h)] for h in hs)
    frame = est.to_frame()
    assert list(frame.columns) == ["height", "varV", "varW", "varU_moment", "varV_smooth", "varW_smooth",
                                   "dofV", "dofW", "flags"]
