"""Lower bound on the regulatory tax from nearby buildings.

For building i and comparison buildings j the bound is

    min over κ ∈ [0, 1] of max_j max{0, a_j + κ b_j}

with a_j = G(h_j) - G(h_i+1) - (P_j - P_i) + κ_T (1 - T_ij) P_j and
b_j = T_ij P_j - P_i.  The objective is a convex, piecewise-linear function
of κ.  It is the larger of a nonincreasing envelope N (lines with b < 0) and
a nondecreasing envelope P (lines with b ≥ 0 and the zero line), so the
minimum sits at an endpoint or where N and P cross.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
import pandas as pd

from .regtax import TaxFrontier, posterior_u
from .spatial import NeighborSet

_BISECT = 60


def min_max_ramps(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Exact min over κ ∈ [0,1] of max(0, max_j a_j + κ b_j), batched over leading axes.

    ``a`` and ``b`` have shape (..., n).  Returns (minimum, smallest minimizer).
    Lines with NaN coefficients are ignored (padding).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = a.shape[:-1]
    if a.shape[-1] == 0:
        return np.zeros(shape), np.zeros(shape)
    pad = np.isnan(a) | np.isnan(b)
    neg = (b < 0) & ~pad
    pos = (b >= 0) & ~pad
    a_n = np.where(neg, a, -np.inf)
    b_n = np.where(neg, b, 0.0)
    a_p = np.where(pos, a, -np.inf)
    b_p = np.where(pos, b, 0.0)

    def N(k):
        return np.max(a_n + k[..., None] * b_n, axis=-1)

    def P(k):
        return np.maximum(0.0, np.max(a_p + k[..., None] * b_p, axis=-1))

    def f(k):
        return np.maximum(N(k), P(k))

    zero, one = np.zeros(shape), np.ones(shape)
    at0 = N(zero) <= P(zero)  # objective already nondecreasing from 0
    at1 = ~at0 & (N(one) >= P(one))  # still falling at 1

    lo, hi = zero.copy(), one.copy()
    for _ in range(_BISECT):
        mid = 0.5 * (lo + hi)
        falling = N(mid) > P(mid)
        lo = np.where(falling, mid, lo)
        hi = np.where(falling, hi, mid)

    # exact crossing of the two lines active inside the final bracket
    mid = 0.5 * (lo + hi)
    j_n = np.argmax(a_n + mid[..., None] * b_n, axis=-1)[..., None]
    vals_p = a_p + mid[..., None] * b_p
    j_p = np.argmax(vals_p, axis=-1)[..., None]
    an = np.take_along_axis(a_n, j_n, -1)[..., 0]
    bn = np.take_along_axis(b_n, j_n, -1)[..., 0]
    zero_active = np.take_along_axis(vals_p, j_p, -1)[..., 0] < 0.0
    ap = np.where(zero_active, 0.0, np.take_along_axis(a_p, j_p, -1)[..., 0])
    bp = np.where(zero_active, 0.0, np.take_along_axis(b_p, j_p, -1)[..., 0])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        cross = (ap - an) / (bn - bp)
    cross = np.where(np.isfinite(cross), np.clip(cross, lo, hi), mid)
    # guard against a wrong active pair right at a kink
    f_cross, f_lo, f_hi = f(cross), f(lo), f(hi)
    k_in = np.where(f_cross <= np.minimum(f_lo, f_hi), cross, np.where(f_lo <= f_hi, lo, hi))

    kappa = np.where(at0, 0.0, np.where(at1, 1.0, k_in))
    return f(kappa), kappa


def min_max_ramps_enumerate(a, b) -> tuple[float, float]:
    """Reference: evaluate at 0, 1 and every pairwise crossing / zero crossing."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cands = {0.0, 1.0}
    with np.errstate(over="ignore"):
        for j in range(len(a)):
            if b[j] != 0:
                cands.add(-a[j] / b[j])
        for i, j in combinations(range(len(a)), 2):
            if b[i] != b[j]:
                cands.add((a[j] - a[i]) / (b[i] - b[j]))
    ks = np.array(sorted(k for k in cands if 0.0 <= k <= 1.0))
    vals = np.maximum(0.0, np.max(a[None, :] + ks[:, None] * b[None, :], axis=1)) if len(a) else np.zeros(len(ks))
    i = int(np.argmin(vals))
    return float(vals[i]), float(ks[i])


def bound_terms(G_j, G_next_i, P_i, P_j, T_ij, kappa_T):
    """Intercepts a_j and slopes b_j of the ramps for given prices."""
    P_i = np.asarray(P_i, dtype=float)
    P_j = np.asarray(P_j, dtype=float)
    a = G_j - G_next_i - (P_j - P_i[..., None]) + kappa_T * (1.0 - T_ij) * P_j
    b = T_ij * P_j - P_i[..., None]
    return a, b


def bound_error_free(G_j, G_next_i, P_i, P_j, T_ij, kappa_T) -> tuple[float, float]:
    """Bound (currency) and minimizing κ_S with prices taken as observed without error."""
    a, b = bound_terms(np.atleast_1d(G_j), G_next_i, np.asarray(P_i), np.atleast_1d(P_j), np.atleast_1d(T_ij), kappa_T)
    v, k = min_max_ramps(a, b)
    return float(v), float(k)


@dataclass
class BoundResult:
    bound: float  # expected bound, currency per m²
    rate: float  # bound divided by the mean price level
    se: float  # Monte Carlo s.e. of the rate
    kappa_S_mean: float
    n_neighbors: int
    flags: tuple[str, ...] = ()


def rt_lower_bound(
    i: int,
    neighbors: NeighborSet | Sequence[int],
    table: pd.DataFrame,
    frontier: TaxFrontier,
    kappa_T: float,
    deflator,
    draws: int = 10_000,
    seed=None,
    radii_sets: Sequence[np.ndarray] | None = None,
) -> BoundResult | list[BoundResult]:
    """Monte Carlo lower bound for building ``i``.

    ``table`` holds one row per building (h, deviation, mu_u, sigma_u,
    sigma_eta, t).  ``deflator(t_i, t_j)`` returns T_ij.  Posterior draws
    for i and every neighbor are independent.  With ``radii_sets`` (nested
    index arrays, one per radius) all radii share the same draws and a list
    is returned.
    """
    rng = np.random.default_rng(seed)
    nb = np.asarray(neighbors[i] if isinstance(neighbors, NeighborSet) else neighbors, dtype=np.intp)
    sets = [nb] if radii_sets is None else [np.asarray(s, dtype=np.intp) for s in radii_sets]
    union = np.unique(np.concatenate(sets)) if sum(len(s) for s in sets) else np.empty(0, dtype=np.intp)

    def draw(rows):
        r = table.iloc[rows]
        post = posterior_u(r["deviation"].to_numpy(), r["mu_u"].to_numpy(), r["sigma_u"].to_numpy(),
                           r["sigma_eta"].to_numpy())
        return np.exp(post.sample(draws, rng))  # (len(rows), draws)

    row_i = table.iloc[i]
    h_i = int(row_i["h"])
    G_i = float(frontier.level(h_i))
    U_i = draw([i])[0]
    P_i = G_i * U_i
    mean_price = float(P_i.mean())
    G_next_i = float(frontier.next_level(h_i))

    results = []
    if len(union):
        U_j = draw(union)  # (m, draws)
        G_j = frontier.level(table["h"].to_numpy()[union])
        T = np.asarray(deflator(float(row_i["t"]), table["t"].to_numpy()[union]), dtype=float)
        P_j = G_j[:, None] * U_j
        a = (G_j[:, None] - G_next_i - (P_j - P_i[None, :]) + kappa_T * (1.0 - T)[:, None] * P_j).T
        b = (T[:, None] * P_j - P_i[None, :]).T  # (draws, m)
        pos_in_union = {int(j): p for p, j in enumerate(union)}
    for s in sets:
        if len(s) == 0:
            results.append(BoundResult(0.0, 0.0, 0.0, float("nan"), 0, ("no_neighbors",)))
            continue
        cols = np.array([pos_in_union[int(j)] for j in s])
        val, kap = min_max_ramps(a[:, cols], b[:, cols])
        rate_draws = val / mean_price
        results.append(BoundResult(
            bound=float(val.mean()),
            rate=float(rate_draws.mean()),
            se=float(rate_draws.std(ddof=1) / np.sqrt(draws)) if draws > 1 else float("nan"),
            kappa_S_mean=float(kap.mean()),
            n_neighbors=len(s),
        ))
    return results[0] if radii_sets is None else results


def bounds_for_all(table: pd.DataFrame, frontier: TaxFrontier, neighbor_sets: dict[float, NeighborSet],
                   kappa_T: float, deflator, draws: int = 10_000, seed: int = 0) -> pd.DataFrame:
    """Bounds at every radius for every building; one seeded stream per building."""
    radii = sorted(neighbor_sets)
    seqs = np.random.SeedSequence(seed).spawn(len(table))
    ok = np.isfinite(table["sigma_u"].to_numpy()) & (table["sigma_u"].to_numpy() > 0)
    usable = np.flatnonzero(ok)
    rows = []
    for i in range(len(table)):
        rec = {"building_id": table["building_id"].iloc[i]}
        if not ok[i]:
            for d in radii:
                rec[f"bound_{int(d)}"] = np.nan
            rows.append(rec)
            continue
        sets = [np.intersect1d(neighbor_sets[d][i], usable) for d in radii]
        res = rt_lower_bound(i, sets[-1], table, frontier, kappa_T, deflator, draws, np.random.default_rng(seqs[i]),
                             radii_sets=sets)
        for d, r in zip(radii, res):
            rec[f"bound_{int(d)}"] = r.rate
            rec[f"bound_se_{int(d)}"] = r.se
            rec[f"kappa_S_{int(d)}"] = r.kappa_S_mean
            rec[f"n_neighbors_{int(d)}"] = r.n_neighbors
        rec["kappa_S_mean"] = res[-1].kappa_S_mean
        rows.append(rec)
    return pd.DataFrame(rows)
