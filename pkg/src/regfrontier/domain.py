"""Transactions, price indices and the bloc/building/apartment panel.

Transactions are carried around as a validated :class:`pandas.DataFrame`
with the canonical column names below; :class:`Transaction` is the record
type for a single row.  The panel is built per building height and is
immutable once constructed.
"""

from __future__ import annotations

import datetime as _dt
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = (
    "parcel_id",
    "bloc_id",
    "city_id",
    "price",
    "area",
    "floor",
    "height",
    "construction_year",
    "transaction_date",
    "legal_status",
)
OPTIONAL_COLUMNS = ("x", "y", "building_id", "share", "property_type")

SINGLE_FAMILY = "single_family"


class SchemaError(ValueError):
    """Input file does not carry a required column or is too dirty to use."""


class IndexCoverageError(ValueError):
    """A transaction date falls outside the published index range."""


@dataclass(frozen=True, slots=True)
class Transaction:
    parcel_id: str
    bloc_id: str
    city_id: str
    price: float
    area: float
    floor: int
    height: int
    construction_year: int
    transaction_date: _dt.date
    legal_status: str
    x: float | None = None
    y: float | None = None

    def __post_init__(self):
        if self.price <= 0 or self.area <= 0:
            raise ValueError("price and area must be positive")
        if self.height < 1 or not 0 <= self.floor <= self.height:
            raise ValueError(f"floor {self.floor} not in [0, {self.height}]")

    @classmethod
    def from_row(cls, row: Mapping) -> "Transaction":
        def opt(v):
            return None if v is None or pd.isna(v) else float(v)

        return cls(
            parcel_id=str(row["parcel_id"]),
            bloc_id=str(row["bloc_id"]),
            city_id=str(row["city_id"]),
            price=float(row["price"]),
            area=float(row["area"]),
            floor=int(row["floor"]),
            height=int(row["height"]),
            construction_year=int(row["construction_year"]),
            transaction_date=pd.Timestamp(row["transaction_date"]).date(),
            legal_status=str(row["legal_status"]),
            x=opt(row.get("x")),
            y=opt(row.get("y")),
        )


def iter_transactions(df: pd.DataFrame) -> Iterator[Transaction]:
    for row in df.to_dict("records"):
        yield Transaction.from_row(row)


@dataclass
class LoadResult:
    transactions: pd.DataFrame
    rejects: pd.DataFrame  # columns: row, reason

    def write_rejects(self, path) -> None:
        self.rejects.to_csv(path, index=False)


def load_transactions(
    path,
    schema: Mapping[str, str] | None = None,
    reject_threshold: float = 0.01,
) -> LoadResult:
    """Read and validate a transactions CSV.

    ``schema`` maps canonical column names to the names used in the file.
    Rows that cannot be parsed count against ``reject_threshold``; rows that
    parse but break an invariant (e.g. floor above height) are only reported.
    Reject row numbers are 1-based data rows (header excluded).  A leading
    line starting with ``#`` (provenance stamp) is skipped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path) as fh:
        stamped = fh.readline().startswith("#")
    raw = pd.read_csv(path, dtype=str, keep_default_na=True, skiprows=1 if stamped else 0)
    schema = dict(schema or {})
    rename = {src: canon for canon, src in schema.items()}
    raw = raw.rename(columns=rename)
    missing = [c for c in REQUIRED_COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    return validate_transactions(raw, reject_threshold=reject_threshold)


def validate_transactions(raw: pd.DataFrame, reject_threshold: float = 0.01) -> LoadResult:
    n = len(raw)
    df = pd.DataFrame(index=raw.index)
    for c in ("parcel_id", "bloc_id", "city_id", "legal_status"):
        df[c] = raw[c].astype("string")
    for c in ("price", "area"):
        df[c] = pd.to_numeric(raw[c], errors="coerce")
    for c in ("floor", "height", "construction_year"):
        df[c] = pd.to_numeric(raw[c], errors="coerce")
    df["transaction_date"] = pd.to_datetime(raw["transaction_date"], errors="coerce")
    for c in ("x", "y"):
        df[c] = pd.to_numeric(raw[c], errors="coerce") if c in raw else np.nan
    if "building_id" in raw:
        df["building_id"] = raw["building_id"].astype("string")
    if "share" in raw:
        df["share"] = pd.to_numeric(raw["share"], errors="coerce")
    if "property_type" in raw:
        df["property_type"] = raw["property_type"].astype("string")

    reasons = pd.Series(pd.NA, index=df.index, dtype="string")
    required = list(REQUIRED_COLUMNS)
    unparseable = df[required].isna().any(axis=1)
    for c in ("floor", "height", "construction_year"):
        bad = df[c].notna() & (df[c] != np.round(df[c]))
        unparseable |= bad
    reasons[unparseable] = "unparseable"

    ok = ~unparseable
    checks = [
        ("price_nonpositive", df["price"] <= 0),
        ("area_nonpositive", df["area"] <= 0),
        ("height_below_one", df["height"] < 1),
        ("floor_negative", df["floor"] < 0),
        ("floor_above_height", df["floor"] > df["height"]),
    ]
    for reason, mask in checks:
        hit = ok & mask.fillna(False) & reasons.isna()
        reasons[hit] = reason

    n_unparseable = int(unparseable.sum())
    if n and n_unparseable / n > reject_threshold:
        raise SchemaError(
            f"{n_unparseable} of {n} rows unparseable, above threshold {reject_threshold:.2%}"
        )
    bad = reasons.notna()
    rejects = pd.DataFrame({"row": np.flatnonzero(bad.to_numpy()) + 1, "reason": reasons[bad].to_numpy()})
    good = df.loc[~bad].copy()
    for c in ("floor", "height", "construction_year"):
        good[c] = good[c].astype(np.int64)
    good = good.reset_index(drop=True)
    if len(rejects):
        log.info("rejected %d of %d rows", len(rejects), n)
    return LoadResult(good, rejects)


@dataclass
class FilterConfig:
    max_years_from_construction: int = 1
    price_trim: tuple[float, float] = (0.01, 0.99)
    min_transactions_per_building: int = 2


@dataclass
class FilterResult:
    transactions: pd.DataFrame
    drops: dict[str, int]


def building_key(df: pd.DataFrame) -> pd.Series:
    """One building per (parcel, height) unless an explicit building_id is given."""
    if "building_id" in df and df["building_id"].notna().all():
        return df["parcel_id"].astype(str) + "|" + df["building_id"].astype(str)
    return df["parcel_id"].astype(str) + "|h" + df["height"].astype(str)


def apply_sample_filters(txs: pd.DataFrame, rules: FilterConfig | None = None) -> FilterResult:
    """Apply the sample rules in order and report how many rows each removed.

    Rules: (1) sale within a year of construction, (2) whole-asset sale,
    (3) not a single-family home, (4) no missing fields, the nominal-price
    trim, and finally (5) at least one other sale in the same building.
    """
    rules = rules or FilterConfig()
    df = txs
    drops: dict[str, int] = {}

    def keep(name, mask):
        nonlocal df
        mask = np.asarray(mask, dtype=bool)
        drops[name] = int((~mask).sum())
        df = df.loc[mask]

    year = pd.to_datetime(df["transaction_date"]).dt.year
    keep("rule1_sale_year", (year - df["construction_year"]).abs() <= rules.max_years_from_construction)
    if "share" in df:
        keep("rule2_full_asset", df["share"].fillna(1.0).to_numpy() >= 1.0 - 1e-12)
    else:
        drops["rule2_full_asset"] = 0
    if "property_type" in df:
        keep("rule3_not_single_family", (df["property_type"].fillna("") != SINGLE_FAMILY).to_numpy())
    else:
        drops["rule3_not_single_family"] = 0
    keep("rule4_complete", df[list(REQUIRED_COLUMNS)].notna().all(axis=1))
    lo, hi = rules.price_trim
    if len(df):
        qlo, qhi = np.quantile(df["price"].to_numpy(float), [lo, hi])
        keep("price_trim", (df["price"] >= qlo) & (df["price"] <= qhi))
    else:
        drops["price_trim"] = 0
    counts = building_key(df).map(building_key(df).value_counts()) if len(df) else pd.Series(dtype=int)
    keep("rule5_other_sale_in_building", counts >= rules.min_transactions_per_building)
    return FilterResult(df.reset_index(drop=True), drops)


@dataclass(frozen=True)
class PriceIndexSeries:
    """Monthly price index; looked up as a step function within the month."""

    dates: np.ndarray  # datetime64[D], strictly increasing
    values: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dates, dtype="datetime64[D]")
        v = np.asarray(self.values, dtype=float)
        if d.shape != v.shape or d.ndim != 1 or len(d) == 0:
            raise ValueError("dates and values must be equal-length 1-D arrays")
        if np.any(np.diff(d).astype(np.int64) <= 0):
            raise ValueError("index dates must be strictly increasing")
        if np.any(~(v > 0)):
            raise ValueError("index values must be positive")
        object.__setattr__(self, "dates", d)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_csv(cls, path) -> "PriceIndexSeries":
        df = pd.read_csv(path)
        return cls(pd.to_datetime(df["date"]).to_numpy("datetime64[D]"), df["index"].to_numpy(float))

    def to_csv(self, path) -> None:
        pd.DataFrame({"date": self.dates.astype(str), "index": self.values}).to_csv(path, index=False)

    def at(self, dates) -> np.ndarray:
        d = np.asarray(dates, dtype="datetime64[D]")
        # the last entry covers the rest of its calendar month
        last_month = self.dates[-1].astype("datetime64[M]")
        end = (last_month + 1).astype("datetime64[D]")
        if np.any(d < self.dates[0]) or np.any(d >= end):
            raise IndexCoverageError(f"dates outside index coverage [{self.dates[0]}, {end})")
        pos = np.searchsorted(self.dates, d, side="right") - 1
        return self.values[pos]

    def base_level(self, base_year: int) -> float:
        yr = self.dates.astype("datetime64[Y]").astype(int) + 1970
        sel = yr == base_year
        if not sel.any():
            raise IndexCoverageError(f"index has no observations in base year {base_year}")
        return float(self.values[sel].mean())


def deflate_prices(
    txs: pd.DataFrame,
    cpi: PriceIndexSeries,
    cost: PriceIndexSeries | None,
    base_year: int,
) -> pd.DataFrame:
    """Attach ``log_price``: real, construction-cost-adjusted log price per m².

    ``cost=None`` skips the construction-cost adjustment (real prices only).
    """
    out = txs.copy()
    dates = pd.to_datetime(out["transaction_date"]).to_numpy("datetime64[D]")
    y = np.log(out["price"].to_numpy(float) / out["area"].to_numpy(float))
    y += np.log(cpi.base_level(base_year)) - np.log(cpi.at(dates))
    if cost is not None:
        y += np.log(cost.base_level(base_year)) - np.log(cost.at(dates))
    out["log_price"] = y
    return out


def reflate_prices(log_price, dates, cpi, cost, base_year) -> np.ndarray:
    """Inverse of :func:`deflate_prices`: nominal price per m² from ``log_price``."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    y = np.asarray(log_price, dtype=float)
    y = y - np.log(cpi.base_level(base_year)) + np.log(cpi.at(dates))
    if cost is not None:
        y = y - np.log(cost.base_level(base_year)) + np.log(cost.at(dates))
    return np.exp(y)


# --------------------------------------------------------------------------
# panel
# --------------------------------------------------------------------------

_EPOCH = np.datetime64("1970-01-01", "D")


@dataclass(frozen=True, eq=False)
class HeightPanel:
    """All apartments in buildings of one height.

    Apartments index buildings through ``building``; buildings index blocs
    through ``bloc``.  Codes are dense, 0-based.
    """

    height: int
    y: np.ndarray
    building: np.ndarray
    bloc: np.ndarray
    day: np.ndarray | None = None
    building_ids: np.ndarray | None = None
    bloc_ids: np.ndarray | None = None
    coords: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        b = np.asarray(self.building, dtype=np.intp)
        k = np.asarray(self.bloc, dtype=np.intp)
        if y.shape != b.shape:
            raise ValueError("y and building codes differ in length")
        if len(y) == 0:
            raise ValueError(f"empty panel at height {self.height}")
        nb = int(b.max()) + 1
        if len(k) != nb or np.bincount(b, minlength=nb).min() == 0:
            raise ValueError("building codes must be dense and match the bloc map")
        if np.bincount(k).min() == 0:
            raise ValueError("bloc codes must be dense")
        for name, val in (("y", y), ("building", b), ("bloc", k)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_apartments(self) -> int:
        return len(self.y)

    @property
    def n_buildings(self) -> int:
        return len(self.bloc)

    @property
    def n_blocs(self) -> int:
        return int(self.bloc.max()) + 1

    @cached_property
    def J(self) -> np.ndarray:
        return np.bincount(self.building, minlength=self.n_buildings)

    @cached_property
    def n_k(self) -> np.ndarray:
        return np.bincount(self.bloc, minlength=self.n_blocs)

    def building_means(self, y=None) -> np.ndarray:
        y = self.y if y is None else y
        return np.bincount(self.building, weights=y, minlength=self.n_buildings) / self.J

    def bloc_means(self, y=None) -> np.ndarray:
        """Unweighted mean of building means within each bloc."""
        yb = self.building_means(y)
        return np.bincount(self.bloc, weights=yb, minlength=self.n_blocs) / self.n_k

    def within_ss(self, y=None) -> np.ndarray:
        y = self.y if y is None else y
        yb = self.building_means(y)
        r = y - yb[self.building]
        return np.bincount(self.building, weights=r * r, minlength=self.n_buildings)

    def with_y(self, y) -> "HeightPanel":
        return HeightPanel(
            self.height, y, self.building, self.bloc, self.day,
            self.building_ids, self.bloc_ids, self.coords,
        )

    def building_days(self) -> np.ndarray | None:
        if self.day is None:
            return None
        return np.bincount(self.building, weights=self.day, minlength=self.n_buildings) / self.J


@dataclass(frozen=True, eq=False)
class Panel:
    """Height → :class:`HeightPanel`, plus counts of what was left out."""

    by_height: dict[int, HeightPanel]
    excluded: dict[str, int] = field(default_factory=dict)

    def __getitem__(self, h: int) -> HeightPanel:
        return self.by_height[h]

    def __iter__(self):
        return iter(sorted(self.by_height))

    def __len__(self):
        return len(self.by_height)

    def __contains__(self, h):
        return h in self.by_height

    @property
    def heights(self) -> list[int]:
        return sorted(self.by_height)

    @property
    def n_apartments(self) -> int:
        return sum(p.n_apartments for p in self.by_height.values())

    def items(self):
        return ((h, self.by_height[h]) for h in self.heights)

    def map_y(self, fn) -> "Panel":
        return Panel({h: fn(p) for h, p in self.items()}, dict(self.excluded))

    def summary(self) -> pd.DataFrame:
        """Counts by height: blocs, share of one-building blocs, mean buildings per bloc, buildings, apartments."""
        rows = []
        for h, p in self.items():
            nk = p.n_k
            rows.append(dict(
                height=h,
                blocs=p.n_blocs,
                pct_one_building=float(np.mean(nk == 1)),
                mean_buildings_per_bloc=float(nk.mean()),
                buildings=p.n_buildings,
                apartments=p.n_apartments,
            ))
        return pd.DataFrame(rows)


def build_panel(txs: pd.DataFrame, price_column: str = "adj_log_price") -> Panel:
    """Group filtered, adjusted transactions into the bloc/building/apartment panel.

    Parcels carrying more than one building are left out (they only serve
    the hedonic fit).  Every remaining building must have at least two sales.
    """
    if price_column not in txs:
        raise KeyError(f"column {price_column!r} missing; run price adjustment first")
    df = txs.assign(_bkey=building_key(txs).to_numpy())
    per_parcel = df.groupby("parcel_id")["_bkey"].nunique()
    multi = per_parcel.index[per_parcel > 1]
    is_multi = df["parcel_id"].isin(multi).to_numpy()
    excluded = {"multi_building_parcel_rows": int(is_multi.sum()), "multi_building_parcels": int(len(multi))}
    df = df.loc[~is_multi]

    has_xy = "x" in df and "y" in df
    by_height: dict[int, HeightPanel] = {}
    for h, g in df.groupby("height", sort=True):
        bcodes, bids = pd.factorize(g["_bkey"], sort=True)
        first = pd.Series(np.arange(len(g))).groupby(bcodes).first().to_numpy()
        bloc_of_b = g["bloc_id"].to_numpy()[first]
        kcodes, kids = pd.factorize(pd.Series(bloc_of_b), sort=True)
        J = np.bincount(bcodes)
        if J.min() < 2:
            raise ValueError(f"height {h}: building with a single sale; apply sample filters first")
        day = None
        if "transaction_date" in g:
            day = (pd.to_datetime(g["transaction_date"]).to_numpy("datetime64[D]") - _EPOCH).astype(float)
        coords = None
        if has_xy:
            xy = g[["x", "y"]].to_numpy(float)
            cx = np.bincount(bcodes, weights=np.nan_to_num(xy[:, 0], nan=0.0)) / J
            cy = np.bincount(bcodes, weights=np.nan_to_num(xy[:, 1], nan=0.0)) / J
            missing = np.bincount(bcodes, weights=np.isnan(xy).any(axis=1).astype(float)) > 0
            coords = np.column_stack([cx, cy])
            coords[missing] = np.nan
        by_height[int(h)] = HeightPanel(
            height=int(h),
            y=g[price_column].to_numpy(float),
            building=bcodes,
            bloc=kcodes,
            day=day,
            building_ids=np.asarray(bids, dtype=object),
            bloc_ids=np.asarray(kids, dtype=object),
            coords=coords,
        )
    return Panel(by_height, excluded)
