"""Panel to frontier: variance components, profiles and the chosen fit."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..domain import Panel
from ..variance import VarianceEstimates, estimate_variances, smooth_variances
from .estimate import FrontierEstimate
from .fit import ProfileSet, fit_constrained, fit_per_height, profile_panel

MODES = ("constrained", "per_height", "quartic")


@dataclass(frozen=True)
class FitConfig:
    g_points: int = 200
    mu_points: int = 60
    refine: int = 30
    smooth_max_degree: int = 6
    variance_floor: float = 1e-6
    zoom: int = 0  # coarse points of an optional first grid pass; 0 = single pass

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FrontierFit:
    estimate: FrontierEstimate
    variances: VarianceEstimates
    profiles: ProfileSet


def noise_inputs(variances: VarianceEstimates):
    """Per-height σ_v, σ_w (smoothed) and the Var(u) moment evaluated with them."""
    hs = [int(h) for h in variances.heights]
    vu = variances.varU_with_smoothed()
    sv = {h: float(np.sqrt(variances.varV_smooth[i])) for i, h in enumerate(hs)}
    sw = {h: float(np.sqrt(variances.varW_smooth[i])) for i, h in enumerate(hs)}
    return sv, sw, {h: float(vu[i]) for i, h in enumerate(hs)}


def estimate_frontier(
    panel: Panel,
    y0: Panel | None = None,
    mode: str = "constrained",
    config: FitConfig | None = None,
    quantity=None,
    quartic_options: dict | None = None,
) -> FrontierFit:
    """Run variance estimation, smoothing, profiling and the frontier fit.

    ``y0`` holds time-detrended prices on the panel's shape; without it the
    panel prices are used for both (appropriate when there is no calendar
    trend, e.g. parametric redraws).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    config = config or FitConfig()
    y0 = panel if y0 is None else y0
    var = smooth_variances(estimate_variances(panel, y0), config.smooth_max_degree, config.variance_floor)
    sv, sw, vu = noise_inputs(var)
    prof = profile_panel(panel, sv, sw, vu, g_points=config.g_points, mu_points=config.mu_points,
                         refine=config.refine, zoom=config.zoom)
    if mode == "per_height":
        est = fit_per_height(prof, quantity)
    else:
        est = fit_constrained(prof, quantity)
        if mode == "quartic":
            from .quartic import fit_quartic

            if quantity is None:
                raise ValueError("quartic mode needs a quantity table")
            est = fit_quartic(panel, prof, quantity, init=est, **(quartic_options or {}))
    est.flags.setdefault("variance_flags", {str(h): f for h, f in var.flags.items() if f})
    return FrontierFit(est, var, prof)
