import json

import numpy as np
import pytest

from regfrontier.domain import Panel
from regfrontier.frontier.bootstrap import bootstrap_ci
from regfrontier.frontier.estimate import PAPER_QUARTIC, CostCurve, FrontierEstimate, HeightParams
from regfrontier.frontier.fit import fit_constrained, fit_per_height, profile_panel
from regfrontier.frontier.likelihood import default_mu_grid, profile_height
from regfrontier.frontier.pipeline import FitConfig, estimate_frontier, noise_inputs
from regfrontier.hedonic import QuantityTable
from regfrontier.synth import calibrated_truth, generate_panel, shape_from_counts

FAST = FitConfig(g_points=80, mu_points=30, refine=20)
LEVELS = {1: 7359, 2: 6822, 3: 6696, 4: 6660, 5: 6744, 6: 7013}


@pytest.fixture(scope="module")
def small_fit():
    truth = calibrated_truth(LEVELS)
    shape = {h: shape_from_counts(300, 900, 6000, h) for h in LEVELS}
    gp = generate_panel(truth, shape, seed=7)
    return gp, estimate_frontier(gp.panel, config=FAST)


def test_constrained_recovers_levels():
    truth_p = calibrated_truth(LEVELS)
    gp = generate_panel(truth_p, {h: shape_from_counts(2000, 6000, 40_000, h) for h in LEVELS}, seed=7)
    est = estimate_frontier(gp.panel, config=FAST).estimate
    truth = np.log([LEVELS[h] for h in est.heights])
    assert np.max(np.abs(est.g - truth)) < 0.05
    assert 1 <= est.mes <= max(LEVELS) - 1


def test_constrained_path_is_valley(small_fit):
    est = small_fit[1].estimate
    assert 1 <= est.mes <= max(LEVELS) - 1
    d = np.diff(est.g)
    m = est.index(est.mes)
    assert np.all(d[:m] <= 0) and np.all(d[m:] >= 0)


def test_sigma_u_matches_moment(small_fit):
    from regfrontier.frontier.tn import tn_variance

    _, fit = small_fit
    _, _, vu = noise_inputs(fit.variances)
    est = fit.estimate
    for i, h in enumerate(est.heights):
        assert tn_variance(est.mu_u[i], est.sigma_u[i]) == pytest.approx(vu[int(h)], rel=1e-7)


def test_constrained_never_beats_per_height(small_fit):
    _, fit = small_fit
    per = fit_per_height(fit.profiles)
    assert fit.estimate.loglik <= per.loglik + 1e-9


def test_slack_constraints_reproduce_per_height():
    from test_fit import fake_profiles

    peaks = [5, 3, 1, 1, 2, 6]
    L = -np.abs(np.arange(8)[None, :] - np.array(peaks)[:, None]).astype(float)
    prof = fake_profiles(L)
    a, b = fit_constrained(prof), fit_per_height(prof)
    np.testing.assert_array_equal(a.g, b.g)
    assert a.mes == b.mes == 3


def test_translation_invariance(small_fit):
    gp, fit = small_fit
    sv, sw, vu = noise_inputs(fit.variances)
    grid = fit.profiles.tables[1].g_grid
    c = 0.37
    shifted = Panel({h: hp.with_y(hp.y + c) for h, hp in gp.panel.items()})
    a = profile_panel(gp.panel, sv, sw, vu, g_grid=grid, mu_points=30, refine=20)
    b = profile_panel(shifted, sv, sw, vu, g_grid=grid + c, mu_points=30, refine=20)
    np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-6)
    assert np.array_equal(fit_constrained(a).g + c, fit_constrained(b).g)


def test_profile_argmax_near_truth():
    p = HeightParams(np.log(6660), 0.532, 0.28, 0.112, 0.07)
    gp = generate_panel({4: p}, {4: shape_from_counts(3000, 9000, 60_000, 1)}, seed=1)
    hp = gp.panel[4]
    from regfrontier.variance import height_moments

    m = height_moments(hp, hp.y)
    step = 0.005
    grid = p.g + step * np.arange(-10, 11)
    t = profile_height(hp, grid, default_mu_grid(m.var_u(), 60), np.sqrt(m.var_v), np.sqrt(m.var_w), m.var_u())
    assert abs(grid[np.argmax(t.loglik)] - p.g) <= 2 * step + 0.01


def test_estimate_json_round_trip(small_fit, tmp_path):
    est = small_fit[1].estimate
    path = tmp_path / "f.json"
    est.to_json(path, note="x")
    back = FrontierEstimate.from_json(path)
    np.testing.assert_allclose(back.g, est.g)
    np.testing.assert_allclose(back.mu_u, est.mu_u)
    assert back.mes == est.mes and back.mode == est.mode
    d = json.loads(path.read_text())
    assert set(d["per_height"][0]) >= {"h", "q", "g_log", "G_level", "mu_u", "sigma_u", "sigma_v", "sigma_w"}


def test_appendix_table_layout(small_fit):
    gp, fit = small_fit
    tab = fit.estimate.appendix_table(gp.panel)
    assert list(tab.columns) == ["height", "quantity", "mle", "minimum", "mean"]
    assert np.all(tab["minimum"] <= tab["mean"])


def test_quartic_recovers_paper_curve():
    qt = QuantityTable.identity(8)
    lv = {h: float(PAPER_QUARTIC.level(qt[h])) for h in qt.heights}
    gp = generate_panel(calibrated_truth(lv), {h: shape_from_counts(400, 1200, 8000, h) for h in lv}, seed=1)
    est = estimate_frontier(gp.panel, mode="quartic", quantity=qt, config=FAST).estimate
    q = np.linspace(1, 8, 50)
    assert np.max(np.abs(est.cost_curve.ac(q) / PAPER_QUARTIC.ac(q) - 1)) < 0.02
    assert est.flags["loglik_spline"] >= est.flags["init_loglik_spline"] - 1e-9
    assert np.allclose(est.g, est.cost_curve.g(qt.q))


def test_affine_cost_has_flat_mc():
    c = CostCurve((900.0, 6472.0, 0.0, 0.0, 0.0))
    q = np.linspace(1, 40, 30)
    np.testing.assert_allclose(c.mc(q), 6472.0)
    np.testing.assert_allclose(c.dmc(q), 0.0)
    assert np.all(c.level(q) == c.ac(q))


def test_quartic_mode_needs_quantity(small_fit):
    with pytest.raises(ValueError):
        estimate_frontier(small_fit[0].panel, mode="quartic", config=FAST)


def test_bootstrap_single_replicate_collapses(small_fit):
    gp, fit = small_fit
    r = bootstrap_ci(fit.estimate, gp.panel, B=1, config=FAST, seed=3)
    np.testing.assert_array_equal(r.lower, r.upper)
    np.testing.assert_array_equal(r.lower, r.replicates[0])


def test_bootstrap_deterministic_and_worker_free(small_fit):
    gp, fit = small_fit
    a = bootstrap_ci(fit.estimate, gp.panel, B=3, config=FAST, seed=11)
    b = bootstrap_ci(fit.estimate, gp.panel, B=3, config=FAST, seed=11, workers=2)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    assert np.all(a.lower <= a.upper)
    with pytest.raises(ValueError):
        bootstrap_ci(fit.estimate, gp.panel, B=0)
