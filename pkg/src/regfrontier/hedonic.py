"""Floor and building-height premia, price adjustment and housing quantity.

Log price per m² is regressed within parcels on floor/height terms, sale
timing relative to construction, a calendar-day polynomial and legal status.
The floor/height part defines the efficiency-unit premium ln m(f, h),
normalized to zero for floor 2 of a 4-floor building.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from numpy.polynomial import legendre
from scipy import linalg

REFERENCE_CELL = (2, 4)
DAY_DEGREE = 9
FLOOR_DUMMIES = (0, 1, 2, 3)

# point estimates of the main restricted-design terms from the empirical application
PAPER_RESTRICTED_COEFS = {
    "floor": 0.0088,
    "height": -0.0006,
    "penthouse": 0.0361,
    "penthouse_m1": 0.0058,
    "penthouse_x_height": 0.0027,
    "year_before": -0.0037,
    "year_after": 0.0030,
}


class RankDeficiencyError(ValueError):
    def __init__(self, names):
        self.names = list(names)
        super().__init__("design is rank deficient; not identified: " + ", ".join(self.names))


# ---------------------------------------------------------------------------
# designs


def restricted_columns() -> list[str]:
    cols = ["floor", "floor_x_h10"]
    for d in FLOOR_DUMMIES:
        cols += [f"f{d}", f"f{d}_x_h4", f"f{d}_x_h10"]
    cols += ["height", "penthouse", "penthouse_m1", "penthouse_x_height"]
    return cols


def restricted_design(f, h) -> np.ndarray:
    """Floor/height columns of the restricted premium design (rows: cells)."""
    f = np.asarray(f, dtype=float)
    h = np.asarray(h, dtype=float)
    h4 = (h > 4).astype(float)
    h10 = (h > 10).astype(float)
    cols = [f, f * h10]
    for d in FLOOR_DUMMIES:
        dd = (f == d).astype(float)
        cols += [dd, dd * h4, dd * h10]
    pent = (f == h).astype(float)
    pent1 = (f == h - 1).astype(float)
    cols += [h, pent, pent1, (pent + pent1) * h]
    return np.column_stack(cols)


def _cell_name(f, h):
    return f"cell_{int(f)}_{int(h)}"


def _timing(df):
    year = pd.to_datetime(df["transaction_date"]).dt.year.to_numpy()
    rel = year - df["construction_year"].to_numpy()
    return (rel == -1).astype(float), (rel == 1).astype(float)


def _day(df):
    return (pd.to_datetime(df["transaction_date"]).to_numpy("datetime64[D]")
            - np.datetime64("1970-01-01", "D")).astype(float)


def _scale(t, lo, hi):
    return np.zeros_like(t) if hi == lo else 2.0 * (t - lo) / (hi - lo) - 1.0


@dataclass
class _Design:
    X: np.ndarray
    names: list[str]
    n_premium: int  # leading columns that make up ln m(f, h)


def _build_design(df, spec, day_range, legal_levels, cells=None) -> _Design:
    f = df["floor"].to_numpy()
    h = df["height"].to_numpy()
    if spec == "restricted":
        P = restricted_design(f, h)
        pnames = restricted_columns()
    elif spec == "saturated":
        cells = cells if cells is not None else sorted(
            {(int(a), int(b)) for a, b in zip(f, h)} - {REFERENCE_CELL}
        )
        index = {c: i for i, c in enumerate(cells)}
        P = np.zeros((len(df), len(cells)))
        for r, (a, b) in enumerate(zip(f, h)):
            j = index.get((int(a), int(b)))
            if j is not None:
                P[r, j] = 1.0
        pnames = [_cell_name(*c) for c in cells]
    else:
        raise ValueError(f"unknown hedonic spec {spec!r}")
    before, after = _timing(df)
    t = _scale(_day(df), *day_range)
    D = legendre.legvander(t, DAY_DEGREE)[:, 1:]
    legal = df["legal_status"].astype(str).to_numpy()
    Lg = np.column_stack([(legal == lv).astype(float) for lv in legal_levels[1:]]) if len(legal_levels) > 1 \
        else np.zeros((len(df), 0))
    X = np.column_stack([P, before, after, D, Lg])
    names = (pnames + ["year_before", "year_after"]
             + [f"day_poly_{k}" for k in range(1, DAY_DEGREE + 1)]
             + [f"legal_{lv}" for lv in legal_levels[1:]])
    return _Design(X, names, len(pnames))


def _demean(A, groups):
    codes, _ = pd.factorize(groups)
    n_g = codes.max() + 1
    cnt = np.bincount(codes, minlength=n_g).astype(float)
    out = np.empty_like(A, dtype=float)
    A2 = A.reshape(len(A), -1)
    o2 = out.reshape(len(A), -1)
    for j in range(A2.shape[1]):
        o2[:, j] = A2[:, j] - (np.bincount(codes, weights=A2[:, j], minlength=n_g) / cnt)[codes]
    return out, n_g


def _dependent_columns(X, names, tol=1e-9):
    if X.shape[1] == 0:
        return []
    norms = np.linalg.norm(X, axis=0)
    zero = [names[j] for j in np.flatnonzero(norms <= tol * max(1.0, norms.max()))]
    keep = np.flatnonzero(norms > tol * max(1.0, norms.max()))
    if len(keep) == 0:
        return zero
    Xs = X[:, keep] / norms[keep]
    _, R, piv = linalg.qr(Xs, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * d[0])) if len(d) else 0
    return zero + [names[keep[j]] for j in piv[rank:]]


# ---------------------------------------------------------------------------
# model


@dataclass
class HedonicModel:
    spec: str
    names: list[str]
    coef: np.ndarray
    cov: np.ndarray
    n_premium: int
    H: int
    day_range: tuple[float, float] = (0.0, 0.0)
    legal_levels: list[str] = field(default_factory=list)
    premium: pd.DataFrame | None = None  # columns f, h, ln_m
    n_obs: int = 0
    absent: list[str] = field(default_factory=list)  # all-zero design columns, fixed at 0

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.premium is None:
            self.premium = self._premium_table()

    # -- coefficients -----------------------------------------------------
    @property
    def params(self) -> pd.Series:
        return pd.Series(self.coef, index=self.names)

    @property
    def se(self) -> pd.Series:
        return pd.Series(np.sqrt(np.clip(np.diag(self.cov), 0, None)), index=self.names)

    def _get(self, name, default=0.0):
        return float(self.params.get(name, default))

    # -- premia -----------------------------------------------------------
    def _raw_premium(self, f, h):
        f = np.asarray(f)
        h = np.asarray(h)
        if self.spec == "restricted":
            beta = np.array([self._get(n) for n in restricted_columns()])
            return restricted_design(f, h) @ beta
        lookup = {n: c for n, c in zip(self.names[: self.n_premium], self.coef[: self.n_premium])}
        lookup[_cell_name(*REFERENCE_CELL)] = 0.0
        return np.array([lookup.get(_cell_name(a, b), np.nan) for a, b in zip(f.ravel(), h.ravel())]).reshape(f.shape)

    def _premium_table(self) -> pd.DataFrame:
        hs, fs = [], []
        for h in range(1, self.H + 1):
            for f in range(0, h + 1):
                fs.append(f)
                hs.append(h)
        fs, hs = np.array(fs), np.array(hs)
        ref = float(self._raw_premium(np.array([REFERENCE_CELL[0]]), np.array([REFERENCE_CELL[1]]))[0])
        ln_m = self._raw_premium(fs, hs) - ref
        return pd.DataFrame({"f": fs, "h": hs, "ln_m": ln_m})

    def ln_m(self, f, h) -> np.ndarray:
        """Normalized log premium for floor ``f`` of an ``h``-floor building."""
        f = np.atleast_1d(np.asarray(f, dtype=int))
        h = np.atleast_1d(np.asarray(h, dtype=int))
        bad = (h < 1) | (h > self.H) | (f < 0) | (f > h)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise KeyError(f"cell (floor={f[i]}, height={h[i]}) outside fitted range 0<=f<=h<={self.H}")
        pos = (h - 1) * (h + 2) // 2 + f  # rows are ordered h, then f = 0..h
        return self.premium["ln_m"].to_numpy()[pos]

    def timing_effect(self, before, after) -> np.ndarray:
        return self._get("year_before") * np.asarray(before, float) + self._get("year_after") * np.asarray(after, float)

    # -- io ---------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "names": list(self.names),
            "coef": [float(c) for c in self.coef],
            "se": [float(s) for s in self.se],
            "cov": self.cov.tolist(),
            "n_premium": self.n_premium,
            "H": self.H,
            "day_range": list(self.day_range),
            "legal_levels": list(self.legal_levels),
            "n_obs": self.n_obs,
            "absent": list(self.absent),
            "premium": {
                "f": self.premium["f"].astype(int).tolist(),
                "h": self.premium["h"].astype(int).tolist(),
                "ln_m": [None if not np.isfinite(v) else float(v) for v in self.premium["ln_m"]],
            },
        }

    def to_json(self, path=None, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        s = json.dumps(d, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s

    @classmethod
    def from_dict(cls, d: Mapping) -> "HedonicModel":
        prem = pd.DataFrame({
            "f": d["premium"]["f"], "h": d["premium"]["h"],
            "ln_m": [np.nan if v is None else v for v in d["premium"]["ln_m"]],
        })
        return cls(
            spec=d["spec"], names=list(d["names"]), coef=np.array(d["coef"]),
            cov=np.array(d["cov"]), n_premium=int(d["n_premium"]), H=int(d["H"]),
            day_range=tuple(d["day_range"]), legal_levels=list(d["legal_levels"]),
            premium=prem, n_obs=int(d.get("n_obs", 0)), absent=list(d.get("absent", [])),
        )

    @classmethod
    def from_json(cls, path) -> "HedonicModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_coefficients(cls, coefs: Mapping[str, float], H: int) -> "HedonicModel":
        """Restricted model from given point estimates (unnamed terms are zero)."""
        names = restricted_columns() + ["year_before", "year_after"]
        unknown = set(coefs) - set(names)
        if unknown:
            raise KeyError(f"unknown coefficient names: {sorted(unknown)}")
        coef = np.array([coefs.get(n, 0.0) for n in names])
        return cls("restricted", names, coef, np.zeros((len(names), len(names))), len(restricted_columns()), H)


def fit_hedonic(txs: pd.DataFrame, spec: str = "restricted", y_column: str = "log_price", H: int | None = None) -> HedonicModel:
    """Within-parcel least squares with heteroskedasticity-robust covariance.

    ``spec='saturated'`` estimates a separate effect for every observed
    (floor, height) cell; ``'restricted'`` uses the compact design.
    """
    df = txs.reset_index(drop=True)
    day = _day(df)
    day_range = (float(day.min()), float(day.max()))
    legal_levels = sorted(df["legal_status"].astype(str).unique())
    des = _build_design(df, spec, day_range, legal_levels)
    # features that never occur (e.g. >10-floor terms when no building is that tall) are fixed at zero
    present = np.any(des.X != 0, axis=0)
    absent = [n for n, keep in zip(des.names, present) if not keep]
    names = [n for n, keep in zip(des.names, present) if keep]
    y = df[y_column].to_numpy(float)
    Xw, n_groups = _demean(des.X[:, present], df["parcel_id"].to_numpy())
    yw, _ = _demean(y, df["parcel_id"].to_numpy())
    bad = _dependent_columns(Xw, names)
    if bad:
        raise RankDeficiencyError(bad)
    n, k = Xw.shape
    XtX_inv = np.linalg.inv(Xw.T @ Xw)
    b = XtX_inv @ (Xw.T @ yw)
    e = yw - Xw @ b
    dof = n - k - n_groups
    meat = (Xw * (e * e)[:, None]).T @ Xw
    scale = n / dof if dof > 0 else np.nan
    beta = np.zeros(len(des.names))
    beta[present] = b
    cov = np.zeros((len(des.names), len(des.names)))
    cov[np.ix_(present, present)] = scale * XtX_inv @ meat @ XtX_inv
    H = int(df["height"].max()) if H is None else int(H)
    return HedonicModel(spec, des.names, beta, cov, des.n_premium, H, day_range, legal_levels, n_obs=n,
                        absent=absent)


def adjust_prices(txs: pd.DataFrame, model: HedonicModel, y_column: str = "log_price",
                  out_column: str = "adj_log_price") -> pd.DataFrame:
    """Remove floor/height premia and sale-timing effects from log prices.

    Calendar-day and legal-status effects stay in the price; they are dealt
    with by the detrending step of the variance decomposition.
    """
    out = txs.copy()
    before, after = _timing(out)
    adj = model.ln_m(out["floor"].to_numpy(), out["height"].to_numpy()) + model.timing_effect(before, after)
    out[out_column] = out[y_column].to_numpy(float) - adj
    return out


# ---------------------------------------------------------------------------
# housing quantity


class MonotonicityError(ValueError):
    pass


@dataclass(frozen=True)
class QuantityTable:
    """Housing quantity per parcel q(h) = sum of premia over floors 1..h."""

    heights: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=int)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "q", q)
        d = np.diff(q)
        if np.any(~(d > 0)):
            bad = [int(h[i + 1]) for i in np.flatnonzero(~(d > 0))]
            raise MonotonicityError(f"q(h) not strictly increasing at heights {bad}")

    def __getitem__(self, h: int) -> float:
        pos = np.flatnonzero(self.heights == h)
        if not len(pos):
            raise KeyError(f"height {h} not in quantity table")
        return float(self.q[pos[0]])

    def __call__(self, h):
        h = np.asarray(h, dtype=int)
        pos = np.searchsorted(self.heights, h)
        if np.any(pos >= len(self.heights)) or np.any(self.heights[np.minimum(pos, len(self.heights) - 1)] != h):
            raise KeyError("height outside quantity table")
        return self.q[pos]

    def height_of(self, q) -> np.ndarray:
        """Inverse map: (interpolated) height producing quantity ``q``."""
        return np.interp(q, self.q, self.heights.astype(float))

    @property
    def sanity_ratio(self) -> np.ndarray:
        return (self.q - self.heights) / self.heights

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"height": self.heights, "q": self.q, "ratio": self.sanity_ratio})

    @classmethod
    def identity(cls, H: int) -> "QuantityTable":
        h = np.arange(1, H + 1)
        return cls(h, h.astype(float))

    @classmethod
    def from_mapping(cls, m: Mapping[int, float]) -> "QuantityTable":
        hs = sorted(m)
        return cls(np.array(hs), np.array([m[h] for h in hs]))


def quantity_table(model: HedonicModel, H: int | None = None) -> QuantityTable:
    H = model.H if H is None else int(H)
    hs = np.arange(1, H + 1)
    q = np.empty(H)
    for i, h in enumerate(hs):
        lm = model.ln_m(np.arange(1, h + 1), np.full(h, h))
        if not np.all(np.isfinite(lm)):
            missing = [int(f) for f in np.arange(1, h + 1)[~np.isfinite(lm)]]
            raise ValueError(f"height {h}: premium missing for floors {missing}")
        q[i] = np.exp(lm).sum()
    return QuantityTable(hs, q)
