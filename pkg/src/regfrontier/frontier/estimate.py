from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from .tn import tn_variance


@dataclass(frozen=True)
class HeightParams:
    """Frontier log price and deviation/noise parameters at one height."""

    g: float
    mu_u: float
    sigma_u: float
    sigma_v: float
    sigma_w: float

    def __post_init__(self):
        if not self.sigma_u > 0:
            raise ValueError("sigma_u must be positive")

    @property
    def var_u(self) -> float:
        return float(tn_variance(self.mu_u, self.sigma_u))


@dataclass(frozen=True)
class CostCurve:
    """Quartic total non-land cost C(q) = b0 + b1 q + b2 q^2 + b3 q^3 + b4 q^4."""

    beta: tuple[float, float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.beta) != 5:
            raise ValueError("quartic needs five coefficients")

    def total(self, q):
        b0, b1, b2, b3, b4 = self.beta
        q = np.asarray(q, dtype=float)
        return b0 + q * (b1 + q * (b2 + q * (b3 + q * b4)))

    def ac(self, q):
        b0, b1, b2, b3, b4 = self.beta
        q = np.asarray(q, dtype=float)
        return b0 / q + b1 + q * (b2 + q * (b3 + q * b4))

    def mc(self, q):
        _, b1, b2, b3, b4 = self.beta
        q = np.asarray(q, dtype=float)
        return b1 + q * (2 * b2 + q * (3 * b3 + q * 4 * b4))

    def dac(self, q):
        b0, _, b2, b3, b4 = self.beta
        q = np.asarray(q, dtype=float)
        return -b0 / (q * q) + b2 + q * (2 * b3 + q * 3 * b4)

    def dmc(self, q):
        _, _, b2, b3, b4 = self.beta
        q = np.asarray(q, dtype=float)
        return 2 * b2 + q * (6 * b3 + q * 12 * b4)

    def level(self, q):
        """G = max(AC, MC)."""
        return np.maximum(self.ac(q), self.mc(q))

    def g(self, q):
        return np.log(self.level(q))

    def scaled(self, c: float) -> "CostCurve":
        return CostCurve(tuple(c * b for b in self.beta))


# printed estimate from the empirical application; used for calibration and docs
PAPER_QUARTIC = CostCurve((900.0, 6472.0, 78.43, -4.1, 0.0823))


@dataclass
class FrontierEstimate:
    """Frontier by height plus the deviation parameters that produced it."""

    mode: str
    heights: np.ndarray
    g: np.ndarray
    mu_u: np.ndarray
    sigma_u: np.ndarray
    sigma_v: np.ndarray
    sigma_w: np.ndarray
    mes: int
    loglik: float = float("nan")
    quantity: np.ndarray | None = None
    cost_curve: CostCurve | None = None
    bands: dict | None = None  # {"level", "lower", "upper"}
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=int)
        for name in ("g", "mu_u", "sigma_u", "sigma_v", "sigma_w"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def G(self) -> np.ndarray:
        return np.exp(self.g)

    def index(self, h: int) -> int:
        pos = np.flatnonzero(self.heights == h)
        if not len(pos):
            raise KeyError(f"height {h} not in estimate")
        return int(pos[0])

    def params(self, h: int) -> HeightParams:
        i = self.index(h)
        return HeightParams(self.g[i], self.mu_u[i], self.sigma_u[i], self.sigma_v[i], self.sigma_w[i])

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({
            "h": self.heights,
            "q": self.quantity if self.quantity is not None else np.full(len(self.heights), np.nan),
            "g_log": self.g,
            "G_level": self.G,
            "mu_u": self.mu_u,
            "sigma_u": self.sigma_u,
            "sigma_v": self.sigma_v,
            "sigma_w": self.sigma_w,
        })
        if self.bands:
            df["band_lower"] = self.bands["lower"]
            df["band_upper"] = self.bands["upper"]
        return df

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mes": int(self.mes),
            "loglik": None if not np.isfinite(self.loglik) else float(self.loglik),
            "per_height": _records(self.to_frame()),
            "quartic": list(self.cost_curve.beta) if self.cost_curve else None,
            "bands": None if not self.bands else {
                "level": self.bands["level"],
                "lower": [float(x) for x in self.bands["lower"]],
                "upper": [float(x) for x in self.bands["upper"]],
            },
            "flags": self.flags,
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
    def from_dict(cls, d: Mapping) -> "FrontierEstimate":
        rows = d["per_height"]

        def col(k):
            return np.array([np.nan if r.get(k) is None else r[k] for r in rows], dtype=float)

        bands = d.get("bands")
        if bands:
            bands = {"level": bands["level"], "lower": np.asarray(bands["lower"]), "upper": np.asarray(bands["upper"])}
        q = col("q")
        return cls(
            mode=d["mode"],
            heights=np.array([r["h"] for r in rows], dtype=int),
            g=col("g_log"),
            mu_u=col("mu_u"),
            sigma_u=col("sigma_u"),
            sigma_v=col("sigma_v"),
            sigma_w=col("sigma_w"),
            mes=int(d["mes"]),
            loglik=float("nan") if d.get("loglik") is None else d["loglik"],
            quantity=None if np.all(np.isnan(q)) else q,
            cost_curve=CostCurve(tuple(d["quartic"])) if d.get("quartic") else None,
            bands=bands,
            flags=dict(d.get("flags") or {}),
        )

    @classmethod
    def from_json(cls, path) -> "FrontierEstimate":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def appendix_table(self, panel=None) -> pd.DataFrame:
        """Height, quantity, frontier level, and (with a panel) min/mean building prices."""
        df = pd.DataFrame({"height": self.heights, "quantity": self.quantity, "mle": self.G})
        if panel is not None:
            mins, means = [], []
            for h in self.heights:
                if h in panel:
                    p = np.exp(panel[h].building_means())
                    mins.append(p.min())
                    means.append(p.mean())
                else:
                    mins.append(np.nan)
                    means.append(np.nan)
            df["minimum"] = mins
            df["mean"] = means
        return df


def _records(df: pd.DataFrame) -> list[dict]:
    out = []
    for r in df.to_dict("records"):
        out.append({k: (None if isinstance(v, float) and not np.isfinite(v) else
                        (int(v) if k == "h" else float(v))) for k, v in r.items()})
    return out


def as_dict(p: HeightParams) -> dict:
    return asdict(p)
