"""Shape-constrained and unconstrained frontier fits over profiled likelihoods."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from ..domain import Panel
from .estimate import FrontierEstimate
from .likelihood import ProfileTable, default_mu_grid, profile_height


class FitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# valley-shaped path search


@dataclass(frozen=True)
class ValleyPath:
    index: np.ndarray  # grid index per position
    value: float  # forward sum of table entries along the path
    mes: int  # 0-based position of the (first) valley floor


def _prefix_max(a):
    return np.maximum.accumulate(a, axis=-1)


def _suffix_max(a):
    return np.maximum.accumulate(a[..., ::-1], axis=-1)[..., ::-1]


def valley_dp(L: np.ndarray) -> ValleyPath:
    """Best path through an (H, M) table, nonincreasing then nondecreasing.

    Rows are positions (heights in order), columns an increasing grid.  The
    switch position ``mes`` must lie in 0..H-2, i.e. the path ends with a
    weakly rising step.  Among optimal paths the lexicographically smallest
    (lowest grid values first) is returned; ``mes`` is then the smallest
    switch position consistent with that path.

    Two value tables are filled backwards: ``up[h, i]`` is the best sum over
    positions h.. when the path may only rise from h on, ``down[h, i]`` when
    it may still fall.  The forward pass picks, at every step, the smallest
    index attaining the exact maximum used in the backward pass.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[1] == 0:
        raise FitError("empty grid")
    H, M = L.shape
    if H < 2:
        raise FitError("need at least two heights")
    dead = ~np.isfinite(L).any(axis=1) | np.isnan(L).any(axis=1)
    if dead.any():
        raise FitError(f"no feasible grid value at position {int(np.flatnonzero(dead)[0])}")
    up = np.empty_like(L)
    down = np.empty_like(L)
    up[H - 1] = L[H - 1]
    down[H - 1] = -np.inf  # the switch cannot happen at the last position
    for h in range(H - 2, -1, -1):
        rise = _suffix_max(up[h + 1])
        fall = _prefix_max(down[h + 1])
        up[h] = L[h] + rise
        down[h] = L[h] + np.maximum(rise, fall)

    best = down[0].max()
    if not np.isfinite(best):
        raise FitError("no feasible path")
    idx = np.empty(H, dtype=np.intp)
    idx[0] = int(np.flatnonzero(down[0] == best)[0])
    phase_down = True
    for h in range(1, H):
        i = idx[h - 1]
        cand_up = np.where(np.arange(M) >= i, up[h], -np.inf)
        target = cand_up.max()
        if phase_down:
            cand_down = np.where(np.arange(M) <= i, down[h], -np.inf)
            target = max(target, cand_down.max())
            hit_down = np.flatnonzero(cand_down == target)
        else:
            hit_down = np.array([], dtype=np.intp)
        hit_up = np.flatnonzero(cand_up == target)
        j_down = hit_down[0] if len(hit_down) else M
        j_up = hit_up[0] if len(hit_up) else M
        # prefer the lower grid value; on equal index stay in the falling phase
        if j_down <= j_up:
            idx[h] = j_down
        else:
            idx[h] = j_up
            phase_down = False
    value = float(sum(L[h, idx[h]] for h in range(H)))
    return ValleyPath(idx, value, smallest_mes(idx))


def smallest_mes(path: Sequence) -> int:
    """Smallest 0-based position m <= H-2 with path falling to m and rising after."""
    p = np.asarray(path)
    H = len(p)
    d = np.diff(p)
    for m in range(H - 1):
        if np.all(d[:m] <= 0) and np.all(d[m:] >= 0):
            return m
    raise FitError("path is not valley-shaped")


def is_valley(path: Sequence) -> bool:
    try:
        smallest_mes(path)
        return True
    except FitError:
        return False


def valley_brute_force(L: np.ndarray) -> ValleyPath:
    """Exhaustive search over all valley paths; for testing."""
    L = np.asarray(L, dtype=float)
    H, M = L.shape
    best, best_path = -np.inf, None
    for path in product(range(M), repeat=H):  # lexicographic order
        if not is_valley(path):
            continue
        v = float(sum(L[h, path[h]] for h in range(H)))
        if v > best:
            best, best_path = v, path
    if best_path is None:
        raise FitError("no feasible path")
    return ValleyPath(np.array(best_path), best, smallest_mes(best_path))


# ---------------------------------------------------------------------------
# grids and profiles


def g_grid_for(panel: Panel, noise_sd: Mapping[int, float], n: int = 200) -> np.ndarray:
    """One grid shared by all heights.

    It runs from the lowest (building-mean minus two noise s.d.) over heights
    to the highest per-height median log price, evenly spaced in logs.
    """
    lo = min(float(panel[h].building_means().min()) - 2.0 * noise_sd[h] for h in panel.heights)
    hi = max(float(np.median(panel[h].y)) for h in panel.heights)
    if not hi > lo:
        hi = lo + 1e-6
    return np.linspace(lo, hi, n)


@dataclass
class ProfileSet:
    heights: np.ndarray
    tables: dict[int, ProfileTable]
    sigma_v: dict[int, float]
    sigma_w: dict[int, float]
    var_u: dict[int, float]
    excluded: list[int]

    def matrix(self, heights=None) -> np.ndarray:
        hs = self.used_heights if heights is None else heights
        return np.vstack([self.tables[h].loglik for h in hs])

    @property
    def used_heights(self) -> list[int]:
        return [int(h) for h in self.heights if int(h) not in self.excluded]


def profile_panel(
    panel: Panel,
    sigma_v: Mapping[int, float],
    sigma_w: Mapping[int, float],
    var_u: Mapping[int, float],
    g_grid: np.ndarray | None = None,
    g_points: int = 200,
    mu_points: int = 60,
    refine: int = 30,
    zoom: int = 0,
) -> ProfileSet:
    """Profile every height over a shared g grid.

    Heights whose Var(u) moment is absent or non-positive are excluded and
    listed in ``excluded``.  With ``zoom > 0`` a first pass on a ``zoom``-point
    grid over the full range locates each height's unconstrained maximum and
    the ``g_points`` grid is laid between the lowest and highest of these
    (padded by two coarse steps).  For unimodal per-height likelihoods every
    shape-constrained solution lies in that window.
    """
    if g_grid is None:
        sd = {h: float(np.sqrt(sigma_v[h] ** 2 + sigma_w[h] ** 2)) for h in panel.heights}
        g_grid = g_grid_for(panel, sd, g_points)
        if zoom:
            g_grid = _zoom_grid(panel, sigma_v, sigma_w, var_u, g_grid, zoom, mu_points)
    tables, excluded = {}, []
    for h, hp in panel.items():
        vu = var_u[h]
        if not (np.isfinite(vu) and vu > 0):
            excluded.append(h)
            continue
        tables[h] = profile_height(hp, g_grid, default_mu_grid(vu, mu_points), sigma_v[h], sigma_w[h], vu, refine)
        if not np.isfinite(tables[h].loglik).any():
            raise FitError(f"height {h}: every grid value is infeasible")
    return ProfileSet(np.array(panel.heights), tables, dict(sigma_v), dict(sigma_w), dict(var_u), excluded)


def _zoom_grid(panel, sigma_v, sigma_w, var_u, full_grid, n_coarse, mu_points):
    coarse = np.linspace(full_grid[0], full_grid[-1], n_coarse)
    step = coarse[1] - coarse[0] if n_coarse > 1 else 0.0
    peaks = []
    for h, hp in panel.items():
        vu = var_u[h]
        if not (np.isfinite(vu) and vu > 0):
            continue
        t = profile_height(hp, coarse, default_mu_grid(vu, mu_points), sigma_v[h], sigma_w[h], vu, refine=0)
        if np.isfinite(t.loglik).any():
            peaks.append(coarse[int(np.argmax(t.loglik))])
    if not peaks:
        return full_grid
    lo = max(full_grid[0] - 2 * step, min(peaks) - 2 * step)
    hi = min(full_grid[-1] + 2 * step, max(peaks) + 2 * step)
    return np.linspace(lo, hi, len(full_grid))


# ---------------------------------------------------------------------------
# estimators


def _assemble(mode, profiles: ProfileSet, chosen: Mapping[int, int], mes_h: int, quantity=None) -> FrontierEstimate:
    hs = [int(h) for h in profiles.heights]
    used = profiles.used_heights
    g = np.full(len(hs), np.nan)
    mu = np.full(len(hs), np.nan)
    su = np.full(len(hs), np.nan)
    ll = 0.0
    for pos, h in enumerate(hs):
        if h in chosen:
            t = profiles.tables[h]
            i = chosen[h]
            g[pos], mu[pos], su[pos] = t.at(i)
            ll += float(t.loglik[i])
    flags = {}
    if profiles.excluded:
        known = np.isfinite(g)
        g = np.interp(hs, np.asarray(hs)[known], g[known])
        flags["interpolated_heights"] = [int(h) for h in profiles.excluded]
    q = None if quantity is None else np.array([quantity[h] for h in hs], dtype=float)
    return FrontierEstimate(
        mode=mode,
        heights=np.array(hs),
        g=g,
        mu_u=mu,
        sigma_u=su,
        sigma_v=np.array([profiles.sigma_v[h] for h in hs]),
        sigma_w=np.array([profiles.sigma_w[h] for h in hs]),
        mes=int(mes_h),
        loglik=ll,
        quantity=q,
        flags=flags,
    )


def fit_constrained(profiles: ProfileSet, quantity=None) -> FrontierEstimate:
    """Global maximum of the summed profile likelihood over valley-shaped frontiers."""
    used = profiles.used_heights
    if len(used) < 2:
        raise FitError("need at least two estimable heights")
    path = valley_dp(profiles.matrix(used))
    chosen = {h: int(path.index[p]) for p, h in enumerate(used)}
    return _assemble("constrained", profiles, chosen, used[path.mes], quantity)


def fit_per_height(profiles: ProfileSet, quantity=None) -> FrontierEstimate:
    """Per-height maxima without any shape restriction (ties to the lower g)."""
    used = profiles.used_heights
    if not used:
        raise FitError("no estimable height")
    chosen = {}
    for h in used:
        ll = profiles.tables[h].loglik
        if not np.isfinite(ll).any():
            raise FitError(f"height {h}: every grid value is infeasible")
        chosen[h] = int(np.argmax(ll))
    g_used = np.array([profiles.tables[h].g_grid[chosen[h]] for h in used])
    mes_h = used[int(np.argmin(g_used[:-1]))] if len(used) > 1 else used[0]
    return _assemble("per_height", profiles, chosen, mes_h, quantity)
