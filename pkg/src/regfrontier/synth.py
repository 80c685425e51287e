"""Synthetic housing markets and multilevel price panels.

Two generators live here.  The equilibrium simulator draws demand and
regulation per market, clears against a step supply correspondence and
reports (price, height) outcomes; it exercises the identification argument
that the lower envelope of observed prices traces the frontier.  The panel
generator draws ``y = g + u + w + v`` on a bloc/building/apartment shape and
returns the hidden effects for oracle tests.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .domain import HeightPanel, Panel
from .frontier.estimate import PAPER_QUARTIC, CostCurve, HeightParams
from .frontier.tn import tn_sample

# ---------------------------------------------------------------------------
# reference shapes and levels from the empirical application

# height -> (blocs, buildings, apartments)
PAPER_SHAPE_COUNTS: dict[int, tuple[int, int, int]] = {
    1: (182, 319, 1453), 2: (629, 1661, 8068), 3: (606, 1394, 10310),
    4: (874, 2968, 28266), 5: (866, 2562, 27642), 6: (826, 2315, 27336),
    7: (663, 1639, 24725), 8: (572, 1340, 24086), 9: (472, 1137, 24384),
    10: (341, 674, 15682), 11: (202, 331, 9214), 12: (155, 253, 7517),
    13: (154, 207, 7303), 14: (121, 202, 6369), 15: (112, 185, 7434),
    16: (93, 142, 6024), 17: (80, 145, 6825), 18: (76, 122, 4060),
    19: (61, 97, 3407), 20: (62, 90, 3744), 21: (49, 67, 3894),
    22: (42, 69, 2373), 23: (25, 40, 1623), 24: (36, 45, 1930),
    25: (21, 22, 1252), 26: (18, 26, 902), 27: (12, 14, 766),
    28: (15, 21, 925), 29: (14, 19, 730), 30: (14, 16, 659),
    31: (7, 9, 309), 32: (7, 7, 205), 33: (5, 6, 267),
    34: (6, 8, 267), 35: (11, 17, 603),
}

# constrained frontier levels G(h) (currency per m^2) by height
PAPER_FRONTIER_LEVELS: dict[int, float] = {
    1: 7359, 2: 6822, 3: 6814, 4: 6696, 5: 6660, 6: 6660, 7: 6744, 8: 6744,
    9: 6744, 10: 6744, 11: 7013, 12: 7013, 13: 7013, 14: 7013, 15: 7013,
    16: 7013, 17: 7013, 18: 7013, 19: 7013, 20: 7013, 21: 7013, 22: 7013,
    23: 7013, 24: 7013, 25: 8264, 26: 8264, 27: 8264, 28: 8264, 29: 9239,
    30: 9239, 31: 9757, 32: 9972, 33: 10695, 34: 14307, 35: 17950,
}

# unconstrained per-height levels, kept for documentation comparisons
PAPER_PER_HEIGHT_LEVELS: dict[int, float] = {
    1: 7359, 2: 6822, 3: 6814, 4: 6696, 5: 6660, 6: 6660, 7: 6786, 8: 6866,
    9: 6714, 10: 6660, 11: 7405, 12: 7010, 13: 7316, 14: 6660, 15: 7829,
    16: 6660, 17: 6966, 18: 6660, 19: 6777, 20: 6789, 21: 8891, 22: 7686,
    23: 9214, 24: 6708, 25: 9621, 26: 10418, 27: 10742, 28: 7942, 29: 9716,
    30: 8878, 31: 9757, 32: 9972, 33: 10695, 34: 14307, 35: 17950,
}

PAPER_QUANTITIES: dict[int, float] = {
    1: 1.05, 2: 2.07, 3: 3.09, 4: 4.09, 5: 5.03, 6: 6.05, 7: 7.07, 8: 8.1,
    9: 9.14, 10: 10.19, 11: 11.18, 12: 12.23, 13: 13.28, 14: 14.35,
    15: 15.42, 16: 16.5, 17: 17.58, 18: 18.68, 19: 19.78, 20: 20.89,
    21: 22.00, 22: 23.13, 23: 24.26, 24: 25.4, 25: 26.54, 26: 27.69,
    27: 28.86, 28: 30.03, 29: 31.2, 30: 32.39, 31: 33.58, 32: 34.78,
    33: 35.99, 34: 37.21, 35: 38.41,
}

# deviation scale calibrated so E[u] ~ 0.55 (a mean tax near 43%) at mu/sigma = 1.9
CALIBRATED_SIGMA_U = 0.28
CALIBRATED_MU_RATIO = 1.9


def calibrated_truth(
    levels: Mapping[int, float] | None = None,
    sigma_u: float = CALIBRATED_SIGMA_U,
    ratio: float = CALIBRATED_MU_RATIO,
) -> dict[int, HeightParams]:
    """Per-height truth with sigma_u = 4 sigma_w = 2.5 sigma_v and mu_u = ratio * sigma_u."""
    levels = PAPER_FRONTIER_LEVELS if levels is None else levels
    return {
        int(h): HeightParams(float(np.log(G)), ratio * sigma_u, sigma_u, sigma_u / 2.5, sigma_u / 4.0)
        for h, G in levels.items()
    }


# ---------------------------------------------------------------------------
# panel shapes


@dataclass(frozen=True)
class HeightShape:
    """Bloc membership of each building and apartment count of each building."""

    bloc: np.ndarray  # per building
    J: np.ndarray  # per building

    @property
    def counts(self) -> tuple[int, int, int]:
        return int(self.bloc.max()) + 1, len(self.J), int(self.J.sum())


def shape_from_counts(blocs: int, buildings: int, apartments: int, rng=None) -> HeightShape:
    """Random hierarchy with exactly the given bloc/building/apartment counts.

    Every bloc holds at least one building and every building at least two
    apartments; the surplus is spread multinomially.
    """
    if not (1 <= blocs <= buildings and apartments >= 2 * buildings):
        raise ValueError("need 1 <= blocs <= buildings and apartments >= 2 * buildings")
    rng = np.random.default_rng(rng)
    n_k = 1 + rng.multinomial(buildings - blocs, np.full(blocs, 1.0 / blocs))
    J = 2 + rng.multinomial(apartments - 2 * buildings, np.full(buildings, 1.0 / buildings))
    return HeightShape(np.repeat(np.arange(blocs), n_k), J)


def paper_shape(rng=None, heights: Sequence[int] | None = None, scale: float = 1.0) -> dict[int, HeightShape]:
    """Shapes cloned from the empirical per-height counts (optionally scaled down)."""
    rng = np.random.default_rng(rng)
    heights = sorted(PAPER_SHAPE_COUNTS) if heights is None else heights
    out = {}
    for h in heights:
        k, b, a = PAPER_SHAPE_COUNTS[h]
        if scale != 1.0:
            k = max(2, int(round(k * scale)))
            b = max(k, int(round(b * scale)))
            a = max(2 * b, int(round(a * scale)))
        out[h] = shape_from_counts(k, b, a, rng)
    return out


def shape_of(panel: Panel) -> dict[int, HeightShape]:
    return {h: HeightShape(np.asarray(hp.bloc), np.asarray(hp.J)) for h, hp in panel.items()}


# ---------------------------------------------------------------------------
# panel generator


@dataclass
class GeneratedPanel:
    panel: Panel
    truth: dict[int, HeightParams]
    u: dict[int, np.ndarray]  # per bloc
    w: dict[int, np.ndarray]  # per building


def draw_height(params: HeightParams, shape: HeightShape, rng, height: int = 1,
                day: np.ndarray | None = None) -> tuple[HeightPanel, np.ndarray, np.ndarray]:
    K = int(shape.bloc.max()) + 1
    nb = len(shape.J)
    building = np.repeat(np.arange(nb), shape.J)
    u = tn_sample(params.mu_u, params.sigma_u, K, rng) if params.sigma_u > 0 else np.full(K, params.mu_u)
    w = rng.normal(0.0, params.sigma_w, nb)
    v = rng.normal(0.0, params.sigma_v, len(building))
    y = params.g + u[shape.bloc][building] + w[building] + v
    hp = HeightPanel(height, y, building, shape.bloc, day=day)
    return hp, u, w


def generate_panel(
    truth: Mapping[int, HeightParams],
    shape: Mapping[int, HeightShape],
    seed=None,
    days: Mapping[int, np.ndarray] | None = None,
) -> GeneratedPanel:
    """Exact draw from the multilevel model on the given shape.

    Heights are drawn in increasing order from one seeded stream, so a seed
    fixes the whole panel.
    """
    rng = np.random.default_rng(seed)
    by_h, us, ws = {}, {}, {}
    for h in sorted(shape):
        day = None if days is None else days.get(h)
        by_h[h], us[h], ws[h] = draw_height(truth[h], shape[h], rng, h, day)
    return GeneratedPanel(Panel(by_h), {h: truth[h] for h in by_h}, us, ws)


def resample_panel(panel: Panel, params: Mapping[int, HeightParams], rng) -> Panel:
    """Parametric redraw of y on the shape of an existing panel (keeps ids, days and coords)."""
    out = {}
    for h, hp in panel.items():
        p = params[h]
        shp = HeightShape(np.asarray(hp.bloc), np.asarray(hp.J))
        drawn, _, _ = draw_height(p, shp, rng, h)
        out[h] = hp.with_y(drawn.y)
    return Panel(out, panel.excluded)


# ---------------------------------------------------------------------------
# transactions in the ingest schema


def panel_transactions(
    gen: GeneratedPanel,
    premia=None,
    start_year: int = 2012,
    years: int = 6,
    multi_parcels: int = 200,
    trend: float = 0.0,
    extent: float = 20_000.0,
    seed=None,
) -> pd.DataFrame:
    """Raw transaction rows (ingest schema) whose adjusted log prices equal the panel draws.

    ``premia`` is a restricted :class:`~regfrontier.hedonic.HedonicModel`
    supplying ln m(f, h) and sale-timing effects (zero premia when None).
    Each panel building sits on its own parcel; ``multi_parcels`` extra
    parcels carry two buildings of different heights so the within-parcel
    premium regression is identified.  ``trend`` adds a calendar sine of
    that amplitude to log prices.
    """
    rng = np.random.default_rng(seed)
    heights = sorted(gen.panel.heights)
    H = max(heights)
    first_day = np.datetime64(f"{start_year}-01-01", "D")
    span = int((np.datetime64(f"{start_year + years}-01-01", "D") - first_day).astype(int))
    frames = []

    def rows(h, y, building, parcel, bloc, xy):
        n = len(y)
        nb = int(building.max()) + 1
        cy = start_year + rng.integers(1, years - 1, nb)  # construction year per building
        rel = rng.integers(-1, 2, n)  # sale year relative to construction
        doy = rng.integers(0, 365, n)
        date = (np.array([f"{c}-01-01" for c in cy[building] + rel], dtype="datetime64[D]") + doy)
        floor = rng.integers(0, h + 1, n)
        ln_p = y.copy()
        if premia is not None:
            ln_p += premia.ln_m(floor, np.full(n, h)) + premia.timing_effect(rel == -1, rel == 1)
        if trend:
            t = (date - first_day).astype(float) / span
            ln_p += trend * np.sin(2 * np.pi * t)
        area = rng.uniform(45.0, 130.0, n).round(1)
        return pd.DataFrame({
            "parcel_id": parcel[building],
            "bloc_id": bloc[building],
            "city_id": "c1",
            "price": np.round(area * np.exp(ln_p), 2),
            "area": area,
            "floor": floor,
            "height": h,
            "construction_year": cy[building],
            "transaction_date": date.astype(str),
            "legal_status": rng.choice(["freehold", "leasehold"], n, p=[0.8, 0.2]),
            "x": xy[building, 0],
            "y": xy[building, 1],
        })

    centers: dict[tuple[int, int], np.ndarray] = {}
    for h in heights:
        hp = gen.panel[h]
        K = hp.n_blocs
        c = rng.uniform(0.0, extent, (K, 2))
        xy = c[hp.bloc] + rng.normal(0.0, 60.0, (hp.n_buildings, 2))
        parcel = np.array([f"p{h}_{b}" for b in range(hp.n_buildings)], dtype=object)
        bloc = np.array([f"k{h}_{k}" for k in range(K)], dtype=object)
        centers.update({(h, k): c[k] for k in range(K)})
        frames.append(rows(h, hp.y, hp.building, parcel, bloc[hp.bloc], xy))

    # two-building parcels; their buildings share a bloc deviation
    for m in range(multi_parcels):
        h1, h2 = rng.choice(heights, 2, replace=False) if len(heights) > 1 else (heights[0], heights[0])
        u = None
        xy = rng.uniform(0.0, extent, (1, 2))
        for b, h in enumerate((h1, h2)):
            p = gen.truth[h]
            if u is None:
                u = float(tn_sample(p.mu_u, p.sigma_u, None, rng)) if p.sigma_u > 0 else p.mu_u
            J = int(rng.integers(2, 8))
            y = p.g + u + rng.normal(0.0, p.sigma_w) + rng.normal(0.0, p.sigma_v, J)
            df = rows(int(h), y, np.zeros(J, dtype=int), np.array([f"m{m}"], dtype=object),
                      np.array([f"km{m}"], dtype=object), xy)
            df["building_id"] = f"b{b}"
            frames.append(df)
    out = pd.concat(frames, ignore_index=True)
    if "building_id" in out:
        out["building_id"] = out["building_id"].fillna("b0")
    return out


# ---------------------------------------------------------------------------
# equilibrium simulator
#
# Supply on one parcel: a developer facing price p per unit of floor space
# builds h in argmax p h - C_W(h) over the heights the regulation allows, with
# C_W(0) = 0.  The argmax correspondence is read off the lower convex hull of
# (h, C_W(h)): hull slopes are the jump prices, flat stretches between hull
# vertices are indifference prices.  Demand for floor space per parcel is
# linear, P_d(x) = a - b x.

REGIMES = ("interior", "indifference", "min-AC-mixing", "no-build")


@dataclass(frozen=True)
class Regulation:
    """One market's regulation: a height cap and per-floor marginal-cost markups."""

    cap: int | None = None
    markup: tuple[float, ...] = ()  # markup on the marginal cost of floor h = 1..H

    @property
    def is_frontier(self) -> bool:
        return self.cap is None and not any(m > 0 for m in self.markup)


@dataclass(frozen=True)
class MarketConfig:
    """Frontier costs, regulation distribution and demand family.

    ``total_cost[h-1]`` is the frontier non-land cost of an h-floor building
    (per parcel, in price units times floors).  With probability
    ``frontier_prob`` a market is unregulated; otherwise it gets a height
    cap (probability ``cap_share``) or log-normal per-floor markups.
    """

    total_cost: tuple[float, ...]
    frontier_prob: float = 0.3
    cap_share: float = 0.5
    markup_log_mean: float = np.log(200.0)
    markup_log_sd: float = 1.0
    demand_a: tuple[float, float] = (6000.0, 10000.0)
    demand_b: tuple[float, float] = (5.0, 600.0)
    demand_regulation_corr: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "total_cost", tuple(float(c) for c in self.total_cost))
        c = np.asarray(self.total_cost)
        if len(c) < 1 or np.any(~(c > 0)):
            raise ValueError("total costs must be positive")
        if not 0.0 < self.frontier_prob <= 1.0:
            raise ValueError("frontier supply needs positive probability")
        if not (self.demand_b[0] > 0 and self.demand_b[1] >= self.demand_b[0]):
            raise ValueError("demand must be strictly decreasing (b > 0)")
        pf = self.frontier_prices
        above = pf[self.mes - 1:]
        if np.any(np.diff(above) < 0):
            raise ValueError("frontier jump prices must be weakly increasing above MES")

    @property
    def H(self) -> int:
        return len(self.total_cost)

    @property
    def ac(self) -> np.ndarray:
        return np.asarray(self.total_cost) / np.arange(1, self.H + 1)

    @property
    def mc(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.total_cost]))

    @property
    def mes(self) -> int:
        return int(np.argmin(self.ac)) + 1

    @property
    def min_ac(self) -> float:
        return float(self.ac.min())

    @property
    def frontier_prices(self) -> np.ndarray:
        """p_f[h]: AC(h) below MES, min AC at MES, MC(h) above."""
        ac, mc, mes = self.ac, self.mc, int(np.argmin(self.ac)) + 1
        h = np.arange(1, self.H + 1)
        return np.where(h < mes, ac, np.where(h == mes, ac.min(), mc))

    @classmethod
    def from_cost_curve(cls, curve: CostCurve = PAPER_QUARTIC, H: int = 20, quantity=None, **kw) -> "MarketConfig":
        """Frontier from a cost curve at q(h) (q(h) = h when ``quantity`` is None)."""
        q = np.arange(1, H + 1, dtype=float) if quantity is None else np.array([quantity[h] for h in range(1, H + 1)])
        return cls(tuple(float(c) for c in curve.total(q) * np.arange(1, H + 1) / q), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_cost"] = list(self.total_cost)
        return d

    def to_json(self, path=None) -> str:
        s = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s

    @classmethod
    def from_dict(cls, d: Mapping) -> "MarketConfig":
        d = dict(d)
        for k in ("demand_a", "demand_b"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    @classmethod
    def from_json(cls, path) -> "MarketConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class EquilibriumOutcome:
    P: float  # NaN when nothing is built
    h: int
    alpha: float  # share of parcels at the lower hull vertex
    regime: str
    lower: int = 0  # lower hull vertex of a mixing outcome

    @property
    def quantity(self) -> float:
        """Floor space per parcel, α lower + (1-α) h."""
        return self.alpha * self.lower + (1.0 - self.alpha) * self.h


def supply_steps(total_cost: Sequence[float], regulation: Regulation | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Hull vertices (starting at 0) and the slopes between consecutive vertices."""
    c = np.asarray(total_cost, dtype=float)
    H = len(c)
    if regulation is not None:
        m = np.zeros(H)
        mk = np.asarray(regulation.markup, dtype=float)[:H]
        m[:len(mk)] = mk
        c = c + np.cumsum(m)
        if regulation.cap is not None:
            c = c[: max(0, int(regulation.cap))]
    xs = np.arange(len(c) + 1, dtype=float)
    ys = np.concatenate([[0.0], c])
    hull = [0]
    for i in range(1, len(xs)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b when it lies on or above the chord a -> i
            if (ys[b] - ys[a]) * (xs[i] - xs[a]) >= (ys[i] - ys[a]) * (xs[b] - xs[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    v = np.array(hull, dtype=int)
    slopes = np.diff(ys[v]) / np.diff(xs[v])
    return v, slopes


def solve_equilibrium(config: MarketConfig, a: float, b: float, regulation: Regulation | None = None) -> EquilibriumOutcome:
    """Cross the linear inverse demand a - b x with the step inverse supply."""
    if not b > 0:
        raise ValueError("inverse demand must be strictly decreasing")
    v, s = supply_steps(config.total_cost, regulation)
    if len(s) == 0 or a <= s[0]:
        return EquilibriumOutcome(float("nan"), 0, 0.0, "no-build")
    for i in range(1, len(v)):
        p = a - b * v[i]
        hi_price = s[i] if i < len(s) else np.inf
        if s[i - 1] <= p <= hi_price:
            return EquilibriumOutcome(float(p), int(v[i]), 0.0, "interior", int(v[i - 1]))
        x = (a - s[i - 1]) / b
        if v[i - 1] < x < v[i]:
            alpha = (v[i] - x) / (v[i] - v[i - 1])
            regime = "min-AC-mixing" if v[i - 1] == 0 else "indifference"
            return EquilibriumOutcome(float(s[i - 1]), int(v[i]), float(alpha), regime, int(v[i - 1]))
    raise RuntimeError("no crossing found")  # unreachable for decreasing demand


def clearing_residual(out: EquilibriumOutcome, a: float, b: float) -> float:
    return 0.0 if out.regime == "no-build" else abs(a - b * out.quantity - out.P)


def draw_regulation(config: MarketConfig, frontier_u: float, rng) -> Regulation:
    """Map a uniform to frontier vs regulated, then draw the regulation itself."""
    if frontier_u < config.frontier_prob:
        return Regulation()
    if rng.uniform() < config.cap_share:
        return Regulation(cap=int(rng.integers(1, config.H + 1)))
    return Regulation(markup=tuple(rng.lognormal(config.markup_log_mean, config.markup_log_sd, config.H)))


def simulate_markets(config: MarketConfig, n: int, seed=None) -> pd.DataFrame:
    """n independent markets; demand and the frontier draw are linked by a Gaussian copula."""
    from scipy.special import ndtr

    rng = np.random.default_rng(seed)
    seqs = np.random.SeedSequence(rng.integers(2**63)).spawn(n)
    rho = config.demand_regulation_corr
    rows = []
    for i in range(n):
        r = np.random.default_rng(seqs[i])
        z = r.standard_normal(2)
        z2 = rho * z[0] + np.sqrt(1.0 - rho * rho) * z[1]
        ua, uf = float(ndtr(z[0])), float(ndtr(z2))
        a = config.demand_a[0] + ua * (config.demand_a[1] - config.demand_a[0])
        b = r.uniform(*config.demand_b)
        reg = draw_regulation(config, uf, r)
        out = solve_equilibrium(config, a, b, reg)
        rows.append({
            "market": i, "a": a, "b": b, "frontier": reg.is_frontier,
            "cap": -1 if reg.cap is None else reg.cap, "P": out.P, "h": out.h,
            "alpha": out.alpha, "lower": out.lower, "regime": out.regime,
        })
    return pd.DataFrame(rows)


def min_price_by_height(outcomes: pd.DataFrame) -> pd.Series:
    built = outcomes[outcomes["h"] > 0]
    return built.groupby("h")["P"].min()
