"""Smooth frontier from a quartic total-cost curve.

For coefficients β the frontier is g(h) = ln max{AC(q(h)), MC(q(h))}.  The
fit maximizes the summed profiled likelihood subject to AC falling down to
the minimum efficient scale and MC rising from it, both checked on the
quantity grid q(1)..q(H).
"""

from __future__ import annotations

import numpy as np
from scipy import interpolate, optimize

from ..domain import Panel
from .estimate import CostCurve, FrontierEstimate
from .fit import FitError, ProfileSet
from .likelihood import default_mu_grid, profile_at


def chain_violation(curve: CostCurve, q: np.ndarray) -> tuple[np.ndarray, float]:
    """Relative violation of the AC/MC shape chains for every candidate MES.

    Returns (violation per mes index 0..H-1, cost level used for scaling).
    """
    ac = curve.ac(q)
    mc = curve.mc(q)
    scale = float(np.median(np.abs(ac))) or 1.0
    H = len(q)
    # AC must not rise going up to mes-1; MC must not fall from mes on
    ac_rise = np.maximum(0.0, np.diff(ac))  # entry h: AC(h+1) - AC(h)
    mc_fall = np.maximum(0.0, -np.diff(mc))
    ac_rise_cum = np.concatenate([[0.0], np.cumsum(ac_rise)])  # sum over steps below position
    mc_fall_tail = np.concatenate([np.cumsum(mc_fall[::-1])[::-1], [0.0]])
    viol = np.empty(H)
    for m in range(H):
        v = 0.0
        if m >= 1:
            v += max(0.0, mc[m - 1] - ac[m - 1]) + ac_rise_cum[m - 1]
        v += max(0.0, ac[m] - mc[m]) + mc_fall_tail[m]
        viol[m] = v
    return viol / scale, scale


def least_squares_init(levels: np.ndarray, q: np.ndarray, mes_index: int) -> CostCurve:
    """Linear fit of AC (below MES) and MC (from MES on) to frontier levels."""
    rows = []
    for i, qi in enumerate(q):
        if i < mes_index:
            rows.append([1.0 / qi, 1.0, qi, qi**2, qi**3])
        else:
            rows.append([0.0, 1.0, 2 * qi, 3 * qi**2, 4 * qi**3])
    A = np.array(rows)
    beta, *_ = np.linalg.lstsq(A, levels, rcond=None)
    return CostCurve(tuple(beta))


class _Objective:
    def __init__(self, profiles: ProfileSet, heights, q):
        self.q = np.asarray(q, dtype=float)
        self.splines, self.lo, self.hi = [], [], []
        for h in heights:
            t = profiles.tables[h]
            ok = np.isfinite(t.loglik)
            g, ll = t.g_grid[ok], t.loglik[ok]
            self.splines.append(interpolate.CubicSpline(g, ll) if len(g) > 3 else
                                interpolate.interp1d(g, ll, fill_value="extrapolate"))
            self.lo.append(g[0])
            self.hi.append(g[-1])
        self.lo, self.hi = np.array(self.lo), np.array(self.hi)
        self.spread = max(1.0, float(np.ptp(np.concatenate([
            profiles.tables[h].loglik[np.isfinite(profiles.tables[h].loglik)] for h in heights]))))

    def loglik(self, curve: CostCurve) -> float:
        lvl = curve.level(self.q)
        if np.any(~(lvl > 0)) or np.any(~(curve.ac(self.q) > 0)) or np.any(~(curve.mc(self.q) > 0)):
            return -np.inf
        g = np.log(lvl)
        gc = np.clip(g, self.lo, self.hi)
        out = sum(float(s(x)) for s, x in zip(self.splines, gc))
        # leave the grid range with a steep slope back toward it
        return out - 1e3 * self.spread * float(np.sum(np.abs(g - gc)))

    def penalized(self, curve: CostCurve, weight: float) -> float:
        ll = self.loglik(curve)
        if not np.isfinite(ll):
            return np.inf
        viol, _ = chain_violation(curve, self.q)
        return -ll + weight * self.spread * float(viol.min())


def fit_quartic(
    panel: Panel,
    profiles: ProfileSet,
    quantity,
    init: FrontierEstimate | None = None,
    starts: int = 8,
    seed: int = 0,
    tol: float = 1e-9,
    max_escalations: int = 8,
    refine: int = 30,
    mu_points: int = 60,
) -> FrontierEstimate:
    """Penalized multi-start Nelder–Mead over the five quartic coefficients.

    The profiled likelihood at each height is read from a cubic spline through
    its grid table; the final frontier is re-profiled exactly.  The penalty
    weight on chain violations grows tenfold until a start is feasible.
    """
    from .fit import fit_constrained

    used = profiles.used_heights
    q = np.array([quantity[h] for h in used], dtype=float)
    if init is None:
        init = fit_constrained(profiles)
    levels = np.exp([init.g[init.index(h)] for h in used])
    mes_idx = used.index(init.mes) if init.mes in used else int(np.argmin(levels[:-1]))
    c0 = least_squares_init(levels, q, mes_idx)
    obj = _Objective(profiles, used, q)
    b0 = np.array(c0.beta)
    step = np.maximum(np.abs(b0), np.array([10.0, 10.0, 1.0, 0.1, 0.01])) * 0.1
    rng = np.random.default_rng(seed)
    x_starts = [np.zeros(5)] + [rng.normal(0.0, 1.0, 5) for _ in range(max(0, starts - 1))]

    def to_curve(x):
        return CostCurve(tuple(b0 + step * x))

    best = None
    weight = 1.0
    for _ in range(max_escalations):
        for xs in x_starts:
            x = xs
            for _round in range(3):
                res = optimize.minimize(lambda z: obj.penalized(to_curve(z), weight), x, method="Nelder-Mead",
                                        options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": 4000, "maxfev": 8000,
                                                 "adaptive": True})
                x = res.x
            curve = to_curve(x)
            viol, _ = chain_violation(curve, q)
            ll = obj.loglik(curve)
            if viol.min() <= tol and np.isfinite(ll) and (best is None or ll > best[0]):
                best = (ll, curve)
        if best is not None:
            break
        weight *= 10.0
    if best is None:
        raise FitError("no feasible quartic found across starts")
    init_ll = obj.loglik(c0)
    init_viol = chain_violation(c0, q)[0].min()
    if init_viol <= tol and np.isfinite(init_ll) and init_ll > best[0]:
        best = (init_ll, c0)
    curve = best[1]
    viol, _ = chain_violation(curve, q)
    mes_idx = int(np.flatnonzero(viol <= tol)[0])

    hs = [int(h) for h in profiles.heights]
    g_all = curve.g(np.array([quantity[h] for h in hs], dtype=float))
    mu = np.full(len(hs), np.nan)
    su = np.full(len(hs), np.nan)
    total = 0.0
    for pos, h in enumerate(hs):
        if h not in used:
            continue
        vu = profiles.var_u[h]
        t = profile_at(panel[h], g_all[pos], default_mu_grid(vu, mu_points), profiles.sigma_v[h],
                       profiles.sigma_w[h], vu, refine)
        mu[pos], su[pos] = t.mu_u[0], t.sigma_u[0]
        total += float(t.loglik[0])
    return FrontierEstimate(
        mode="quartic",
        heights=np.array(hs),
        g=g_all,
        mu_u=mu,
        sigma_u=su,
        sigma_v=np.array([profiles.sigma_v[h] for h in hs]),
        sigma_w=np.array([profiles.sigma_w[h] for h in hs]),
        mes=used[mes_idx],
        loglik=total,
        quantity=np.array([quantity[h] for h in hs], dtype=float),
        cost_curve=curve,
        flags={"penalty_weight": weight, "init_beta": list(c0.beta), "init_loglik_spline": init_ll,
               "loglik_spline": best[0]},
    )
