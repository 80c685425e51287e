"""Multilevel variance components by height.

Apartment noise comes from dispersion inside buildings, building noise from
dispersion of building means inside blocs, and the bloc-level deviation
variance from the dispersion of bloc means across blocs, each corrected for
the lower-level noise it contains.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import pandas as pd
from numpy.polynomial import legendre

from .domain import HeightPanel, Panel

# ---------------------------------------------------------------------------
# time detrending


@dataclass(frozen=True)
class DetrendResult:
    residuals: Panel
    degree: int
    coef: np.ndarray
    day_range: tuple[float, float]
    cv_mse: np.ndarray

    def index(self, day) -> np.ndarray:
        """Fitted log price index γ̂(t) at calendar day(s) t, including the intercept."""
        return legendre.legval(_scale(np.asarray(day, dtype=float), self.day_range), self.coef)

    @property
    def gamma(self) -> Callable[[np.ndarray], np.ndarray]:
        return self.index


def _scale(t, rng):
    lo, hi = rng
    if hi == lo:
        return np.zeros_like(t)
    return 2.0 * (t - lo) / (hi - lo) - 1.0


def _fold_ids(day, y, folds, seed):
    # fold assignment depends only on the values, so row order does not matter
    order = np.lexsort((y, day))
    ranks = np.empty(len(day), dtype=np.intp)
    ranks[order] = np.arange(len(day))
    perm = np.random.default_rng(seed).permutation(len(day))
    return perm[ranks] % folds


def time_detrend(panel: Panel, max_degree: int = 12, folds: int = 10, seed: int = 0) -> DetrendResult:
    """Residuals of a polynomial-series regression of log price on sale day.

    All heights are pooled (prices share one calendar).  The degree in
    0..max_degree minimizes ``folds``-fold cross-validated squared error.
    """
    hs = panel.heights
    if any(panel[h].day is None for h in hs):
        raise ValueError("panel lacks transaction days")
    day = np.concatenate([panel[h].day for h in hs])
    y = np.concatenate([panel[h].y for h in hs])
    n = len(y)
    if n < max_degree + 1:
        raise ValueError(f"{n} observations cannot support degree {max_degree}")
    rng_ = (float(day.min()), float(day.max()))
    X = legendre.legvander(_scale(day, rng_), max_degree)
    fid = _fold_ids(day, y, min(folds, n), seed)
    mse = np.zeros(max_degree + 1)
    for d in range(max_degree + 1):
        err = 0.0
        for f in range(min(folds, n)):
            tr, te = fid != f, fid == f
            beta, *_ = np.linalg.lstsq(X[tr, : d + 1], y[tr], rcond=None)
            err += np.sum((y[te] - X[te, : d + 1] @ beta) ** 2)
        mse[d] = err / n
    # smallest degree within floating noise of the best
    tol = 1e-12 * max(float(np.mean(y * y)), 1e-300)
    best = int(np.flatnonzero(mse <= mse.min() + tol)[0])
    coef, *_ = np.linalg.lstsq(X[:, : best + 1], y, rcond=None)
    fit = X[:, : best + 1] @ coef
    resid = y - fit
    resid[np.abs(resid) < 1e-13 * max(1.0, np.abs(y).max())] = 0.0
    out, s = {}, 0
    for h in hs:
        m = panel[h].n_apartments
        out[h] = panel[h].with_y(resid[s:s + m])
        s += m
    return DetrendResult(Panel(out, dict(panel.excluded)), best, coef, rng_, mse)


# ---------------------------------------------------------------------------
# per-height estimators


@dataclass(frozen=True)
class HeightMoments:
    var_v: float
    var_w: float
    dof_v: int
    dof_w: int
    # Var(u) moment = bloc_dispersion - coef_w var_w - coef_v var_v
    bloc_dispersion: float
    coef_w: float
    coef_v: float
    K: int

    def var_u(self, var_v=None, var_w=None) -> float:
        if self.K < 2:
            return float("nan")
        vv = self.var_v if var_v is None else var_v
        vw = self.var_w if var_w is None else var_w
        return self.bloc_dispersion - self.coef_w * vw - self.coef_v * vv


def height_moments(hp: HeightPanel, y0: np.ndarray, y_raw: np.ndarray | None = None) -> HeightMoments:
    """The three moment estimators at one height.

    ``y0`` are time-detrended log prices (used for the two noise levels);
    ``y_raw`` (default ``hp.y``) enters the bloc-level dispersion.
    """
    y_raw = hp.y if y_raw is None else y_raw
    J = hp.J.astype(float)
    nk = hp.n_k.astype(float)
    K = hp.n_blocs
    dof_v = int(np.sum(J - 1))
    var_v = float(hp.within_ss(y0).sum() / dof_v) if dof_v > 0 else float("nan")

    yb0 = hp.building_means(y0)
    ybk0 = hp.bloc_means(y0)
    dof_w = int(np.sum(nk - 1))
    if dof_w > 0:
        ss = float(np.sum((yb0 - ybk0[hp.bloc]) ** 2))
        nkb = nk[hp.bloc]
        corr = float(np.sum((nkb - 1) / (nkb * J)))
        var_w = (ss - var_v * corr) / dof_w
    else:
        var_w = float("nan")

    if K >= 2:
        ybk = hp.bloc_means(y_raw)
        disp = float(np.sum((ybk - ybk.mean()) ** 2) / (K - 1))
        coef_w = float(np.mean(1.0 / nk))
        coef_v = float(np.sum(1.0 / (nk[hp.bloc] ** 2 * J)) / K)
    else:
        disp, coef_w, coef_v = float("nan"), float("nan"), float("nan")
    return HeightMoments(var_v, var_w, dof_v, dof_w, disp, coef_w, coef_v, K)


@dataclass
class VarianceEstimates:
    heights: np.ndarray
    moments: dict[int, HeightMoments]
    varV_smooth: np.ndarray | None = None
    varW_smooth: np.ndarray | None = None
    smooth_degree: dict = field(default_factory=dict)
    flags: dict[int, list[str]] = field(default_factory=dict)

    @property
    def varV(self) -> np.ndarray:
        return np.array([self.moments[h].var_v for h in self.heights])

    @property
    def varW(self) -> np.ndarray:
        return np.array([self.moments[h].var_w for h in self.heights])

    @property
    def dofV(self) -> np.ndarray:
        return np.array([self.moments[h].dof_v for h in self.heights])

    @property
    def dofW(self) -> np.ndarray:
        return np.array([self.moments[h].dof_w for h in self.heights])

    @property
    def varU_moment(self) -> np.ndarray:
        """Raw Var(u) moment (with unsmoothed noise variances); NaN where absent."""
        return np.array([self.moments[h].var_u() for h in self.heights])

    def varU_with_smoothed(self) -> np.ndarray:
        """Var(u) moment re-evaluated at the smoothed noise variances."""
        if self.varV_smooth is None:
            raise ValueError("smooth_variances has not been run")
        return np.array([
            self.moments[h].var_u(self.varV_smooth[i], self.varW_smooth[i])
            for i, h in enumerate(self.heights)
        ])

    def noise_sd(self, h: int, smoothed: bool = True) -> tuple[float, float]:
        i = int(np.flatnonzero(self.heights == h)[0])
        if smoothed and self.varV_smooth is not None:
            return float(np.sqrt(self.varV_smooth[i])), float(np.sqrt(self.varW_smooth[i]))
        m = self.moments[h]
        return float(np.sqrt(m.var_v)), float(np.sqrt(m.var_w))

    def to_frame(self) -> pd.DataFrame:
        n = len(self.heights)
        nan = np.full(n, np.nan)
        return pd.DataFrame({
            "height": self.heights,
            "varV": self.varV,
            "varW": self.varW,
            "varU_moment": self.varU_moment,
            "varV_smooth": nan if self.varV_smooth is None else self.varV_smooth,
            "varW_smooth": nan if self.varW_smooth is None else self.varW_smooth,
            "dofV": self.dofV,
            "dofW": self.dofW,
            "flags": [";".join(self.flags.get(int(h), [])) for h in self.heights],
        })

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


def _flag_level(flags, h, name, value):
    if not np.isfinite(value):
        flags.setdefault(h, []).append(f"{name}_absent")
    elif value < 0:
        flags.setdefault(h, []).append(f"{name}_negative")


def estimate_variances(panel: Panel, y0: Panel) -> VarianceEstimates:
    """Apply the three moment estimators height by height.

    ``panel`` carries the adjusted (not detrended) prices; ``y0`` the
    detrended residuals on the same shape.  Absent or negative estimates are
    kept and flagged.
    """
    moments, flags = {}, {}
    for h, hp in panel.items():
        m = height_moments(hp, y0[h].y, hp.y)
        moments[h] = m
        _flag_level(flags, h, "varW", m.var_w)
        _flag_level(flags, h, "varU", m.var_u())
    return VarianceEstimates(np.array(panel.heights), moments, flags=flags)


# ---------------------------------------------------------------------------
# smoothing across heights


def _wpoly_fit(x, y, w, deg):
    X = legendre.legvander(x, deg)
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return beta


def smooth_series(heights, values, weights, max_degree: int = 6):
    """Weighted polynomial fit over heights, degree by leave-one-out CV.

    Returns (fitted values at every height, chosen degree).
    """
    heights = np.asarray(heights, dtype=float)
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    ok = np.isfinite(values) & (weights > 0)
    if not ok.any():
        raise ValueError("series has no usable values")
    if ok.sum() < 3:
        raise ValueError("need at least 3 non-missing heights to smooth")
    rng_ = (heights.min(), heights.max())
    x = _scale(heights, rng_)
    xo, yo, wo = x[ok], values[ok], weights[ok]
    n = len(xo)
    scores = []
    for d in range(0, min(max_degree, n - 2) + 1):
        err = 0.0
        for i in range(n):
            m = np.arange(n) != i
            beta = _wpoly_fit(xo[m], yo[m], wo[m], d)
            err += wo[i] * (yo[i] - legendre.legval(xo[i], beta)) ** 2
        scores.append(err / wo.sum())
    scores = np.array(scores)
    deg = int(np.flatnonzero(scores <= scores.min() * (1 + 1e-9) + 1e-300)[0])
    beta = _wpoly_fit(xo, yo, wo, deg)
    return legendre.legval(x, beta), deg


def smooth_variances(est: VarianceEstimates, max_degree: int = 6, eps: float = 1e-6) -> VarianceEstimates:
    """Smooth σ̂_v² and σ̂_w² across heights; Var(u) is left as is.

    Weights are the level degrees of freedom; fitted values below ``eps``
    are raised to ``eps`` and flagged.
    """
    flags = {h: list(v) for h, v in est.flags.items()}
    out = {}
    degrees = {}
    for name, vals, dof in (("varV", est.varV, est.dofV), ("varW", est.varW, est.dofW)):
        fit, deg = smooth_series(est.heights, vals, dof.astype(float), max_degree)
        low = fit < eps
        for h in est.heights[low]:
            flags.setdefault(int(h), []).append(f"{name}_smooth_floored")
        out[name] = np.maximum(fit, eps)
        degrees[name] = deg
    return replace(est, varV_smooth=out["varV"], varW_smooth=out["varW"], smooth_degree=degrees, flags=flags)
