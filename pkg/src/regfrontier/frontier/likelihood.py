"""Per-height likelihood of the bloc/building/apartment frontier model.

Within a height, ``y_kij = g + u_k + w_ki + v_kij`` with ``u_k ~ TN(mu_u,
sigma_u^2)``, ``w_ki ~ N(0, sigma_w^2)`` and ``v_kij ~ N(0, sigma_v^2)``.
The bloc likelihood integrates ``u`` and ``w`` out in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..domain import HeightPanel
from .tn import log_Phi, solve_sigma_u

_LN_2PI = np.log(2.0 * np.pi)


class LikelihoodError(FloatingPointError):
    pass


def bloc_kernels(panel: HeightPanel, g, mu_u, sigma_u, sigma_v, sigma_w, y=None):
    """Per-bloc likelihood kernel, term by term as in the closed form.

    The kernel is twice the bloc log density plus ``N_k ln 2π`` (``N_k`` the
    bloc's apartment count), i.e. the log likelihood "ignoring constants".
    """
    y = panel.y if y is None else np.asarray(y, dtype=float)
    su2, sv2, sw2 = sigma_u**2, sigma_v**2, sigma_w**2
    K, nb = panel.n_blocs, panel.n_buildings
    bloc, J = panel.bloc, panel.J
    nk = panel.n_k.astype(float)
    r = y - g
    S = np.bincount(panel.building, weights=r, minlength=nb)
    Q = np.bincount(panel.building, weights=r * r, minlength=nb)
    a = sv2 + J * sw2
    nk_b = nk[bloc]

    sig_k2 = su2 * nk / np.bincount(bloc, weights=(a + nk_b * J * su2) / a, minlength=K)
    mu_k = sig_k2 / (su2 * nk) * np.bincount(
        bloc, weights=(mu_u * a + nk_b * su2 * S) / a, minlength=K
    )
    data = np.bincount(bloc, weights=sw2 * S * S / a - Q, minlength=K) / sv2
    logdet = np.bincount(bloc, weights=np.log(a) + (J - 1) * np.log(sv2), minlength=K)
    return (
        mu_k**2 / sig_k2 - mu_u**2 / su2 + data
        + np.log(sig_k2) - np.log(su2) - logdet
        + 2.0 * log_Phi(mu_k / np.sqrt(sig_k2)) - 2.0 * log_Phi(mu_u / sigma_u)
    )


def loglik_height(panel: HeightPanel, g, mu_u, sigma_u, sigma_v, sigma_w, y=None, kernel=False) -> float:
    """Log likelihood of all blocs at one height.

    Returns the proper log density by default; ``kernel=True`` returns the
    constant-free kernel (twice the log likelihood up to an additive constant),
    which has the same maximizer.
    """
    if min(sigma_u, sigma_v, sigma_w) <= 0:
        raise ValueError("scales must be positive")
    kern = bloc_kernels(panel, g, mu_u, sigma_u, sigma_v, sigma_w, y)
    bad = ~np.isfinite(kern)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        name = panel.bloc_ids[k] if panel.bloc_ids is not None else k
        raise LikelihoodError(f"non-finite likelihood in bloc {name!r} at height {panel.height}")
    if kernel:
        return float(kern.sum())
    n_apts = np.bincount(panel.bloc, weights=panel.J, minlength=panel.n_blocs)
    return float(0.5 * np.sum(kern - n_apts * _LN_2PI))


@dataclass(frozen=True)
class BlocStats:
    """Sufficient statistics of one height for fixed measurement-error scales.

    With ``a_i = sigma_v^2 + J_i sigma_w^2`` each bloc reduces to the
    precision ``B = sum J_i / a_i``, the precision-weighted mean ``m`` of its
    building means, the weighted dispersion ``D`` around ``m`` and a constant
    that depends on neither ``g`` nor the deviation distribution.
    """

    B: np.ndarray
    m: np.ndarray
    D: np.ndarray
    const: np.ndarray

    @classmethod
    def from_panel(cls, panel: HeightPanel, sigma_v, sigma_w, y=None):
        y = panel.y if y is None else y
        sv2, sw2 = sigma_v**2, sigma_w**2
        K = panel.n_blocs
        J = panel.J.astype(float)
        a = sv2 + J * sw2
        ybar = panel.building_means(y)
        W = panel.within_ss(y)
        B = np.bincount(panel.bloc, weights=J / a, minlength=K)
        m = np.bincount(panel.bloc, weights=J * ybar / a, minlength=K) / B
        D = np.bincount(panel.bloc, weights=J * (ybar - m[panel.bloc]) ** 2 / a, minlength=K)
        n_apts = np.bincount(panel.bloc, weights=J, minlength=K)
        const = -np.bincount(
            panel.bloc, weights=W / sv2 + np.log(a) + (J - 1) * np.log(sv2), minlength=K
        ) - n_apts * _LN_2PI
        return cls(B, m, D, const)

    def loglik(self, g, mu_u, sigma_u):
        """Log likelihood summed over blocs, broadcasting ``g``, ``mu_u``, ``sigma_u``.

        Inputs broadcast against each other; the bloc axis is appended last
        and summed out.
        """
        g = np.asarray(g, dtype=float)
        mu = np.asarray(mu_u, dtype=float)
        su = np.asarray(sigma_u, dtype=float)
        su2 = su * su
        # bloc-free part, counted once per bloc
        shared = len(self.B) * (-mu * mu / su2 - np.log(su2) - 2.0 * log_Phi(mu / su))
        su2_ = su2[..., None]
        prec = 1.0 / su2_ + self.B
        e = self.m - g[..., None]
        num = mu[..., None] / su2_ + self.B * e  # mu_k * prec
        kern = (
            num * num / prec - self.D - self.B * e * e
            - np.log(prec) + 2.0 * log_Phi(num / np.sqrt(prec)) + self.const
        )
        return 0.5 * (kern.sum(axis=-1) + shared)


@dataclass(frozen=True)
class ProfileTable:
    """Likelihood at one height profiled over the deviation location."""

    height: int
    g_grid: np.ndarray
    loglik: np.ndarray  # -inf where infeasible
    mu_u: np.ndarray
    sigma_u: np.ndarray

    def at(self, idx):
        return self.g_grid[idx], self.mu_u[idx], self.sigma_u[idx]


def default_mu_grid(var_u: float, n: int = 60) -> np.ndarray:
    return np.linspace(0.0, 4.0 * np.sqrt(var_u), n)


_GOLD = 0.5 * (np.sqrt(5.0) - 1.0)


def profile_height(
    panel: HeightPanel,
    g_grid,
    mu_grid,
    sigma_v: float,
    sigma_w: float,
    var_u: float,
    refine: int = 30,
    chunk: int = 2_000_000,
) -> ProfileTable:
    """Max over ``mu_grid`` of the log likelihood for every ``g`` in ``g_grid``.

    ``sigma_u`` follows from ``mu_u`` through the variance moment ``var_u``.
    With ``refine > 0`` the best grid ``mu_u`` is polished by that many
    golden-section steps inside its neighbouring grid cells.
    """
    g_grid = np.asarray(g_grid, dtype=float)
    mu_grid = np.asarray(mu_grid, dtype=float)
    if g_grid.size == 0 or mu_grid.size == 0:
        raise ValueError("empty grid")
    if not var_u > 0:
        return ProfileTable(panel.height, g_grid, np.full(g_grid.shape, -np.inf),
                            np.full(g_grid.shape, np.nan), np.full(g_grid.shape, np.nan))
    stats = BlocStats.from_panel(panel, sigma_v, sigma_w)
    sig_grid = solve_sigma_u(mu_grid, var_u)
    K = len(stats.B)
    step = max(1, chunk // max(1, K * len(mu_grid)))
    best = np.full(g_grid.shape, -np.inf)
    arg = np.zeros(g_grid.shape, dtype=np.intp)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        for s in range(0, len(g_grid), step):
            ll = stats.loglik(g_grid[s:s + step, None], mu_grid[None, :], sig_grid[None, :])
            ll = np.where(np.isfinite(ll), ll, -np.inf)
            arg[s:s + step] = np.argmax(ll, axis=1)
            best[s:s + step] = ll[np.arange(ll.shape[0]), arg[s:s + step]]
    mu_best = mu_grid[arg]
    sig_best = sig_grid[arg]
    if refine and len(mu_grid) > 1:
        lo = mu_grid[np.maximum(arg - 1, 0)]
        hi = mu_grid[np.minimum(arg + 1, len(mu_grid) - 1)]
        mu_r, ll_r, sig_r = _golden_mu(stats, g_grid, lo, hi, var_u, refine)
        better = ll_r > best
        best = np.where(better, ll_r, best)
        mu_best = np.where(better, mu_r, mu_best)
        sig_best = np.where(better, sig_r, sig_best)
    return ProfileTable(panel.height, g_grid, best, mu_best, sig_best)


def _golden_mu(stats: BlocStats, g, lo, hi, var_u, iters):
    g = np.asarray(g, dtype=float)

    def f(mu):
        mu = np.maximum(mu, 0.0)
        sig = solve_sigma_u(mu, var_u)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            v = stats.loglik(g, mu, sig)
        return np.where(np.isfinite(v), v, -np.inf), sig

    a, b = lo.copy(), hi.copy()
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, _ = f(c)
    fd, _ = f(d)
    for _ in range(iters):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _GOLD * (b - a)
        new_d = a + _GOLD * (b - a)
        # reuse the surviving interior point
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        fc_prev, fd_prev = fc, fd
        eval_pts = np.where(left, c_next, d_next)
        fe, _ = f(eval_pts)
        fc = np.where(left, fe, fd_prev)
        fd = np.where(left, fc_prev, fe)
        c, d = c_next, d_next
    mu = 0.5 * (a + b)
    ll, sig = f(mu)
    return np.maximum(mu, 0.0), ll, sig


def profile_at(panel: HeightPanel, g, mu_grid, sigma_v, sigma_w, var_u, refine=30):
    """Profile at arbitrary (continuous) frontier values ``g``."""
    return profile_height(panel, np.atleast_1d(g), mu_grid, sigma_v, sigma_w, var_u, refine)
