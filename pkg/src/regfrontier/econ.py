"""Elasticity of average to marginal cost, isoquant and consolidation counterfactual."""

from __future__ import annotations

from typing import Mapping

import numpy as np
import pandas as pd

from .domain import Panel
from .frontier.estimate import CostCurve

ISOQUANT_NOTE = "one unit of housing: land = 1/q(h) parcels, capital = C(q(h))/q(h)"


class SingularElasticityError(ZeroDivisionError):
    """Marginal cost is flat at the evaluation point, so the elasticity blows up."""


def elasticity(cost: CostCurve, q) -> np.ndarray:
    """σ(q) = d ln AC / d ln MC = (AC'/AC) / (MC'/MC), in closed form."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("quantities must be positive")
    dmc = cost.dmc(q)
    if np.any(dmc == 0):
        raise SingularElasticityError(f"MC'(q) = 0 at q = {q[dmc == 0].tolist() if q.ndim else float(q)}")
    out = (cost.dac(q) / cost.ac(q)) / (dmc / cost.mc(q))
    return out[()] if out.ndim == 0 else out


def elasticity_fd(cost: CostCurve, q, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference ratio of ln AC to ln MC (reference)."""
    q = np.asarray(q, dtype=float)
    lo, hi = q * (1 - step), q * (1 + step)
    return (np.log(cost.ac(hi)) - np.log(cost.ac(lo))) / (np.log(cost.mc(hi)) - np.log(cost.mc(lo)))


def ac_minimizer(cost: CostCurve, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Continuous AC minimizer inside [lo, hi], located by the sign change of AC'."""
    from scipy.optimize import brentq

    if not (cost.dac(lo) < 0 < cost.dac(hi)):
        raise ValueError("AC' does not change sign from - to + on the bracket")
    return float(brentq(cost.dac, lo, hi, xtol=tol))


def elasticity_frame(cost: CostCurve, q) -> pd.DataFrame:
    """Plot-ready table of AC, MC and σ; σ is NaN where MC' vanishes."""
    q = np.asarray(q, dtype=float)
    dmc = cost.dmc(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        sig = np.where(dmc != 0, (cost.dac(q) / cost.ac(q)) / (dmc / cost.mc(q)), np.nan)
    return pd.DataFrame({"q": q, "ac": cost.ac(q), "mc": cost.mc(q), "sigma": sig})


def isoquant(cost: CostCurve, quantity) -> pd.DataFrame:
    """Land and capital needed for one unit of housing at each height."""
    hs = np.asarray(quantity.heights, dtype=int)
    q = np.asarray(quantity.q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("quantities must be positive")
    return pd.DataFrame({"h": hs, "q": q, "land": 1.0 / q, "capital": cost.total(q) / q})


def building_counts(panel: Panel | Mapping[int, float]) -> dict[int, float]:
    if isinstance(panel, Panel):
        return {int(h): float(hp.n_buildings) for h, hp in panel.items()}
    return {int(h): float(n) for h, n in panel.items()}


def consolidation_counterfactual(
    panel: Panel | Mapping[int, float],
    cost: CostCurve,
    quantity,
    band_lo: int,
    band_hi: int,
    target_h: int,
) -> tuple[float, float]:
    """Rebuild every building with height in [band_lo, band_hi] at ``target_h`` floors.

    Floor space is conserved, so the new building count is Σ h / target_h
    (fractional counts allowed).  Land is the number of buildings, non-land
    cost is Σ C(q(h)) over buildings.  Returns percentage changes
    (land, non-land cost) relative to the existing stock in the band.
    """
    try:
        q_target = float(quantity[int(target_h)])
    except (KeyError, IndexError):
        raise ValueError(f"target height {target_h} outside the quantity range") from None
    counts = {h: n for h, n in building_counts(panel).items() if band_lo <= h <= band_hi}
    if not counts or sum(counts.values()) == 0:
        raise ValueError("no buildings in the height band")
    land0 = sum(counts.values())
    cost0 = sum(n * float(cost.total(quantity[h])) for h, n in counts.items())
    land1 = sum(n * h for h, n in counts.items()) / target_h
    cost1 = land1 * float(cost.total(q_target))
    return 100.0 * (land1 / land0 - 1.0), 100.0 * (cost1 / cost0 - 1.0)
