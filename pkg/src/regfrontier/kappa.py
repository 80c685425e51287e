"""Period, cohort and age effects in existing-home prices.

Cohort effects are restricted to be proportional (factor δ) to the period
effects evaluated at the construction period, so with quadratic period
effects δ is the ratio of the squared-construction-period coefficient to
the squared-sale-period coefficient.  κ_T = δ/(1+δ).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .hedonic import _demean, _dependent_columns, RankDeficiencyError

REGRESSORS = ("t", "t2_100", "s2_100", "age", "age2_100")


class UnidentifiedError(ValueError):
    pass


@dataclass(frozen=True)
class PeriodEffects:
    gamma1: float
    gamma2: float
    delta: float
    alpha1: float
    alpha2: float
    kappa_T: float
    se_delta: float
    se_kappa_T: float
    origin: float = 0.0  # period origin (years)
    n_obs: int = 0

    def gamma(self, t) -> np.ndarray:
        """Period effect γ(t) = γ1 t + γ2 t², t in years since ``origin``."""
        t = np.asarray(t, dtype=float) - self.origin
        return self.gamma1 * t + self.gamma2 * t * t

    def deflator(self, t_i, t_j) -> np.ndarray:
        """T_ij = exp(γ(t_i) - γ(t_j)): price at t_j restated in period t_i."""
        return np.exp(self.gamma(t_i) - self.gamma(t_j))

    def to_json(self, path=None, **extra) -> str:
        d = asdict(self)
        d.update(extra)
        s = json.dumps(d, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s

    @classmethod
    def from_json(cls, path) -> "PeriodEffects":
        with open(path) as fh:
            d = json.load(fh)
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    @classmethod
    def fixed(cls, kappa_T: float, gamma1: float = 0.0, gamma2: float = 0.0, origin: float = 0.0) -> "PeriodEffects":
        delta = kappa_T / (1.0 - kappa_T)
        return cls(gamma1, gamma2, delta, 0.0, 0.0, kappa_T, 0.0, 0.0, origin)


def kappa_design(t, s) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    age = t - s
    return np.column_stack([t, t * t / 100.0, s * s / 100.0, age, age * age / 100.0])


def fit_kappa_T(
    txs: pd.DataFrame,
    y_column: str = "log_price",
    t_column: str = "t",
    s_column: str = "s",
    group_column: str = "parcel_id",
    controls: list[str] | None = None,
    origin: float = 0.0,
    tol: float = 1e-10,
) -> PeriodEffects:
    """Within-group least squares of log price on t, t²/100, s²/100, age, age²/100.

    ``t`` and ``s`` are sale and construction periods in years since
    ``origin``.  Extra ``controls`` columns enter linearly.  Standard errors
    are heteroskedasticity-robust; the δ and κ_T errors use the delta method.
    """
    df = txs.reset_index(drop=True)
    X = kappa_design(df[t_column].to_numpy(float), df[s_column].to_numpy(float))
    names = list(REGRESSORS)
    if controls:
        X = np.column_stack([X, df[controls].to_numpy(float)])
        names += list(controls)
    y = df[y_column].to_numpy(float)
    groups = df[group_column].to_numpy()
    Xw, n_groups = _demean(X, groups)
    yw, _ = _demean(y, groups)
    bad = _dependent_columns(Xw, names)
    if bad:
        raise RankDeficiencyError(bad)
    XtX_inv = np.linalg.inv(Xw.T @ Xw)
    beta = XtX_inv @ (Xw.T @ yw)
    e = yw - Xw @ beta
    n, k = Xw.shape
    dof = n - k - n_groups
    cov = (n / dof) * XtX_inv @ ((Xw * (e * e)[:, None]).T @ Xw) @ XtX_inv
    a, b = beta[1], beta[2]
    if abs(a) <= tol * max(1.0, np.abs(beta).max()) or abs(a) < 2.0 * np.sqrt(cov[1, 1]) * 1e-6:
        raise UnidentifiedError("coefficient on squared sale period is ~0; δ is unidentified with linear period effects")
    delta = b / a
    grad = np.array([-b / a**2, 1.0 / a])
    V = cov[np.ix_([1, 2], [1, 2])]
    se_delta = float(np.sqrt(grad @ V @ grad))
    kappa = delta / (1.0 + delta)
    se_kappa = se_delta / (1.0 + delta) ** 2
    return PeriodEffects(
        gamma1=float(beta[0]),
        gamma2=float(beta[1] / 100.0),
        delta=float(delta),
        alpha1=float(beta[3]),
        alpha2=float(beta[4] / 100.0),
        kappa_T=float(kappa),
        se_delta=se_delta,
        se_kappa_T=float(se_kappa),
        origin=origin,
        n_obs=n,
    )


def existing_home_sales(
    n_parcels: int,
    sales_per_parcel: int,
    delta: float,
    gamma1: float = -0.034,
    coef_t2: float = 0.311,
    alpha1: float = 0.0012,
    coef_age2: float = -0.0036,
    periods: float = 20.0,
    max_age: float = 40.0,
    noise: float = 0.15,
    seed=None,
) -> pd.DataFrame:
    """Synthetic resale data with a proportional cohort effect.

    ``coef_t2`` and ``coef_age2`` are coefficients on the /100-scaled squares.
    Log price = parcel effect + γ(t) + δ γ(s) + α1 age + α2 age² + noise.
    """
    rng = np.random.default_rng(seed)
    n = n_parcels * sales_per_parcel
    parcel = np.repeat(np.arange(n_parcels), sales_per_parcel)
    t = rng.uniform(0.0, periods, n)
    age = rng.uniform(0.0, max_age, n)
    s = t - age
    g2 = coef_t2 / 100.0
    a2 = coef_age2 / 100.0

    def gamma(x):
        return gamma1 * x + g2 * x * x

    fe = rng.normal(0.0, 0.3, n_parcels)[parcel]
    y = fe + gamma(t) + delta * gamma(s) + alpha1 * age + a2 * age * age + rng.normal(0.0, noise, n)
    return pd.DataFrame({"parcel_id": parcel, "t": t, "s": s, "log_price": y})
