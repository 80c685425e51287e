"""Posterior deviations and the regulatory tax.

The tax at height h is the price in excess of the frontier cost of the
cheapest admissible alternative: min average cost below the minimum
efficient scale, the marginal cost of one more floor at or above it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .frontier.estimate import FrontierEstimate
from .frontier.tn import inv_mills, log_phi, log_Phi, tn_sample


# ---------------------------------------------------------------------------
# posterior of the bloc deviation


@dataclass(frozen=True)
class PosteriorU:
    """TN(mu_star, sigma_star^2) for u given u + eta = deviation."""

    mu_star: np.ndarray
    sigma_star: np.ndarray
    deviation: np.ndarray
    mu_u: float | np.ndarray
    sigma_u: float | np.ndarray
    sigma_eta: np.ndarray

    def logpdf(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        z = (u - self.mu_star) / self.sigma_star
        val = log_phi(z) - np.log(self.sigma_star) - log_Phi(self.mu_star / self.sigma_star)
        return np.where(u >= 0, val, -np.inf)

    def pdf(self, u) -> np.ndarray:
        return np.exp(self.logpdf(u))

    def mean(self) -> np.ndarray:
        return self.mu_star + self.sigma_star * inv_mills(self.mu_star / self.sigma_star)

    def sample(self, size=None, rng=None) -> np.ndarray:
        """Draws of u; ``size`` is appended after the parameter shape when given as an int."""
        rng = np.random.default_rng(rng)
        mu = np.asarray(self.mu_star, dtype=float)
        sd = np.asarray(self.sigma_star, dtype=float)
        if size is None:
            return tn_sample(mu, sd, None, rng)
        shape = mu.shape + ((size,) if np.isscalar(size) else tuple(size))
        return tn_sample(mu[..., None], sd[..., None], shape, rng)


def posterior_u(deviation, mu_u, sigma_u, sigma_eta) -> PosteriorU:
    """Conditional law of the deviation u given the observed ``y - g``.

    μ* = (μ_u σ_η² + (y-g) σ_u²)/(σ_u² + σ_η²),  σ*² = σ_u² σ_η²/(σ_u² + σ_η²).
    """
    d = np.asarray(deviation, dtype=float)
    se = np.asarray(sigma_eta, dtype=float)
    if np.any(~(np.asarray(sigma_u) > 0)) or np.any(~(se > 0)):
        raise ValueError("scales must be positive")
    su2, se2 = np.square(sigma_u), se * se
    mu_star = (mu_u * se2 + d * su2) / (su2 + se2)
    sigma_star = np.sqrt(su2 * se2 / (su2 + se2))
    return PosteriorU(mu_star, sigma_star, d, mu_u, sigma_u, np.broadcast_to(se, d.shape))


def sigma_eta(sigma_v, sigma_w, J=None):
    """Noise s.d. of a building mean over J sales (``J=None``: a single apartment)."""
    if J is None:
        return np.sqrt(np.square(sigma_w) + np.square(sigma_v))
    return np.sqrt(np.square(sigma_w) + np.square(sigma_v) / np.asarray(J, dtype=float))


# ---------------------------------------------------------------------------
# frontier cost levels used by the tax


@dataclass
class TaxFrontier:
    """Frontier levels needed for the tax: G(h), G(h+1) and min average cost."""

    heights: np.ndarray
    G: np.ndarray
    G_next: np.ndarray  # alternative cost of one more floor (MC at h+1)
    min_ac: float
    mes: int
    flags: dict = field(default_factory=dict)

    @classmethod
    def from_estimate(cls, est: FrontierEstimate, quantity=None) -> "TaxFrontier":
        """Discrete frontier from G values; a cost curve (if present) supplies levels beyond the top."""
        hs = est.heights
        flags = {}
        if est.cost_curve is not None and quantity is not None:
            c = est.cost_curve
            q = np.array([quantity[h] for h in hs], dtype=float)
            try:
                q_top = float(quantity[int(hs[-1]) + 1])
            except (KeyError, IndexError):
                q_top = None
            if q_top is None:
                q_next = np.append(q[1:], np.nan)
                flags["top_next_from"] = "carried_forward"
            else:
                q_next = np.append(q[1:], q_top)
                flags["top_next_from"] = "cost_curve"
            G = c.level(q)
            G_next = c.mc(q_next)
            if q_top is None:
                G_next[-1] = c.mc(q[-1])
            min_ac = float(c.ac(quantity[est.mes]))
        else:
            G = est.G
            G_next = np.append(G[1:], G[-1])
            flags["top_next_from"] = "carried_forward"
            min_ac = float(G[est.index(est.mes)])
        return cls(np.asarray(hs), np.asarray(G, float), np.asarray(G_next, float), min_ac, int(est.mes), flags)

    def _pos(self, h):
        h = np.asarray(h, dtype=int)
        pos = np.searchsorted(self.heights, h)
        ok = (pos < len(self.heights)) & (self.heights[np.minimum(pos, len(self.heights) - 1)] == h)
        if not np.all(ok):
            raise KeyError(f"height(s) {np.unique(h[~ok]).tolist()} outside the frontier")
        return pos

    def level(self, h) -> np.ndarray:
        return self.G[self._pos(h)]

    def next_level(self, h) -> np.ndarray:
        return self.G_next[self._pos(h)]

    def alternative_cost(self, h) -> np.ndarray:
        """Min average cost below MES, next-floor marginal cost at or above it."""
        h = np.asarray(h, dtype=int)
        return np.where(h < self.mes, self.min_ac, self.next_level(h))


def rt_level(price, h, frontier: TaxFrontier) -> np.ndarray:
    """Regulatory tax in currency per m² at height ``h``."""
    price = np.asarray(price, dtype=float)
    h = np.asarray(h, dtype=int)
    alt = frontier.alternative_cost(h)
    below = h < frontier.mes
    out = np.where(below, price - alt, np.maximum(0.0, price - alt))
    return out[()] if out.ndim == 0 else out


def expected_rt_rate(deviation, h, mu_u, sigma_u, sig_eta, frontier: TaxFrontier,
                     draws: int = 10_000, seed=None) -> tuple[float, float]:
    """Monte Carlo E[RT(G U, h)/(G U) | y - g]; returns (rate, standard error)."""
    if not (np.isfinite(sigma_u) and sigma_u > 0):
        raise ValueError(f"no deviation scale at height {h}")
    rng = np.random.default_rng(seed)
    post = posterior_u(deviation, mu_u, sigma_u, sig_eta)
    u = post.sample(draws, rng)
    G = float(frontier.level(h))
    price = G * np.exp(u)
    r = rt_level(price, np.full(price.shape, h), frontier) / price
    return float(r.mean()), float(r.std(ddof=1) / np.sqrt(len(r))) if len(r) > 1 else float("nan")


# ---------------------------------------------------------------------------
# building table


@dataclass
class BuildingTable:
    """One row per building with what the tax and bound computations need."""

    frame: pd.DataFrame  # building_id, h, J, ybar, deviation, mu_u, sigma_u, sigma_eta, day, x, y


def building_table(panel, est: FrontierEstimate) -> BuildingTable:
    rows = []
    for h, hp in panel.items():
        i = est.index(h)
        yb = hp.building_means()
        days = hp.building_days()
        ids = hp.building_ids if hp.building_ids is not None else np.array([f"h{h}_b{b}" for b in range(hp.n_buildings)], dtype=object)
        xy = hp.coords if hp.coords is not None else np.full((hp.n_buildings, 2), np.nan)
        rows.append(pd.DataFrame({
            "building_id": ids,
            "h": h,
            "J": hp.J,
            "ybar": yb,
            "deviation": yb - est.g[i],
            "mu_u": est.mu_u[i],
            "sigma_u": est.sigma_u[i],
            "sigma_eta": sigma_eta(est.sigma_v[i], est.sigma_w[i], hp.J),
            "day": np.nan if days is None else days,
            "x": xy[:, 0],
            "y": xy[:, 1],
        }))
    return BuildingTable(pd.concat(rows, ignore_index=True))


def tax_rates(table: BuildingTable, frontier: TaxFrontier, draws: int = 10_000, seed: int = 0) -> pd.DataFrame:
    """Expected tax rate and MC s.e. for every building (seeded per row)."""
    df = table.frame
    seqs = np.random.SeedSequence(seed).spawn(len(df))
    rate = np.full(len(df), np.nan)
    se = np.full(len(df), np.nan)
    for r, row in enumerate(df.itertuples(index=False)):
        if not (np.isfinite(row.sigma_u) and row.sigma_u > 0):
            continue
        rate[r], se[r] = expected_rt_rate(row.deviation, row.h, row.mu_u, row.sigma_u, row.sigma_eta,
                                          frontier, draws, np.random.default_rng(seqs[r]))
    return pd.DataFrame({"building_id": df["building_id"], "h": df["h"], "rate": rate, "se": se})
