import numpy as np
import pytest
from scipy import integrate, stats

from regfrontier.domain import HeightPanel
from regfrontier.frontier.likelihood import (BlocStats, LikelihoodError, default_mu_grid, loglik_height,
                                             profile_at, profile_height)
from regfrontier.frontier.tn import solve_sigma_u, tn_variance

from conftest import random_height_panel


def quadrature_loglik(hp, g, mu, su, sv, sw):
    """Integrate the bloc deviation out numerically, bloc by bloc."""
    tot = 0.0
    tn = stats.truncnorm(-mu / su, np.inf, loc=mu, scale=su)
    for k in range(hp.n_blocs):
        blds = np.flatnonzero(hp.bloc == k)

        def logf(u):
            s = 0.0
            for i in blds:
                e = hp.y[hp.building == i] - g - u
                n = len(e)
                s += stats.multivariate_normal.logpdf(e, np.zeros(n), sv**2 * np.eye(n) + sw**2)
            return s + tn.logpdf(u)

        top = max(mu, 0.0) + 12 * su
        us = np.linspace(0, top, 801)
        lf = np.array([logf(u) for u in us])
        c = lf.max()
        val = integrate.quad(lambda u: np.exp(logf(u) - c), 0, top, points=[us[np.argmax(lf)]],
                             epsabs=0, epsrel=1e-13, limit=500)[0]
        tot += np.log(val) + c
    return tot


def random_case(rng):
    hp = random_height_panel(rng, K=int(rng.integers(1, 4)))
    su = rng.uniform(0.05, 0.5)
    mu = rng.uniform(-4, 4) * su
    return hp, rng.normal(), mu, su, rng.uniform(0.03, 0.3), rng.uniform(0.03, 0.3)


def test_against_quadrature_small(rng):
    for _ in range(8):
        hp, g, mu, su, sv, sw = random_case(rng)
        ref = quadrature_loglik(hp, g, mu, su, sv, sw)
        assert abs(loglik_height(hp, g, mu, su, sv, sw) - ref) / hp.n_apartments < 1e-8


def test_fast_path_equals_printed_form(rng):
    for _ in range(30):
        hp, g, mu, su, sv, sw = random_case(rng)
        a = loglik_height(hp, g, mu, su, sv, sw)
        b = BlocStats.from_panel(hp, sv, sw).loglik(g, mu, su)
        assert b == pytest.approx(a, abs=1e-9 * hp.n_apartments)


def test_vectorized_over_grid(rng):
    hp, g, mu, su, sv, sw = random_case(rng)
    st = BlocStats.from_panel(hp, sv, sw)
    gs = np.linspace(-0.5, 0.5, 7)
    vec = st.loglik(gs[:, None], mu, su)
    for i, gi in enumerate(gs):
        assert vec[i] == pytest.approx(loglik_height(hp, gi, mu, su, sv, sw), abs=1e-9)


def test_single_bloc_single_building_is_normal_mixture_limit():
    # σ_u → 0 with μ_u fixed: the deviation is a point mass at μ_u
    y = np.array([0.2, 0.4, 0.1])
    hp = HeightPanel(1, y, np.zeros(3, int), np.zeros(1, int))
    sv, sw, mu = 0.2, 0.1, 0.25
    ll = loglik_height(hp, 0.0, mu, 1e-5, sv, sw)
    ref = stats.multivariate_normal.logpdf(y - mu, np.zeros(3), sv**2 * np.eye(3) + sw**2)
    assert ll == pytest.approx(ref, abs=1e-4)


def test_invalid_scales_raise(rng):
    hp = random_height_panel(rng)
    with pytest.raises((ValueError, LikelihoodError)):
        loglik_height(hp, 0.0, 0.1, -0.2, 0.1, 0.1)


def test_profile_respects_moment_and_maximizes(rng):
    hp = random_height_panel(rng, K=30, y_sd=0.3)
    sv, sw, var_u = 0.1, 0.07, 0.05
    g_grid = np.linspace(-0.5, 0.5, 21)
    mu_grid = default_mu_grid(var_u, 30)
    tab = profile_height(hp, g_grid, mu_grid, sv, sw, var_u, refine=30)
    assert np.allclose(tn_variance(tab.mu_u, tab.sigma_u), var_u, rtol=1e-8)
    st = BlocStats.from_panel(hp, sv, sw)
    for i in (0, 10, 20):
        ll_grid = [st.loglik(g_grid[i], m, s) for m, s in zip(mu_grid, solve_sigma_u(mu_grid, var_u))]
        assert tab.loglik[i] >= max(ll_grid) - 1e-9
    single = profile_at(hp, g_grid[5], mu_grid, sv, sw, var_u, refine=30)
    assert single.loglik[0] == pytest.approx(tab.loglik[5], abs=1e-9)
