"""Parametric bootstrap bands for the frontier."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..domain import Panel
from ..synth import resample_panel
from .estimate import FrontierEstimate, HeightParams
from .pipeline import FitConfig, estimate_frontier


@dataclass
class BootstrapResult:
    level: float
    lower: np.ndarray
    upper: np.ndarray
    replicates: np.ndarray  # (B, H) log frontier values
    seed: int

    def as_bands(self) -> dict:
        return {"level": self.level, "lower": self.lower, "upper": self.upper}


def _fill_params(est: FrontierEstimate) -> dict[int, HeightParams]:
    """Per-height draw parameters; heights without a deviation fit borrow the nearest one."""
    ok = np.isfinite(est.mu_u) & np.isfinite(est.sigma_u) & (est.sigma_u > 0)
    if not ok.any():
        raise ValueError("estimate has no height with fitted deviation parameters")
    good = np.flatnonzero(ok)
    out = {}
    for i, h in enumerate(est.heights):
        j = i if ok[i] else int(good[np.argmin(np.abs(good - i))])
        out[int(h)] = HeightParams(est.g[i], est.mu_u[j], est.sigma_u[j], est.sigma_v[i], est.sigma_w[i])
    return out


def _replicate(args):
    panel, params, seq, mode, config, quantity = args
    rng = np.random.default_rng(seq)
    star = resample_panel(panel, params, rng)
    fit = estimate_frontier(star, mode=mode, config=config, quantity=quantity)
    return fit.estimate.g


def bootstrap_ci(
    estimate: FrontierEstimate,
    panel: Panel,
    B: int = 200,
    level: float = 0.95,
    seed: int = 0,
    config: FitConfig | None = None,
    quantity=None,
    workers: int = 1,
) -> BootstrapResult:
    """Pointwise percentile bands from ``B`` parametric redraws.

    Each replicate redraws u, w and v from the fitted parameters on the
    panel's shape and reruns the whole estimation from the variance step
    on.  Replicate ``b`` uses the ``b``-th child of ``SeedSequence(seed)``,
    so results do not depend on ``workers``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    params = _fill_params(estimate)
    mode = estimate.mode
    seqs = np.random.SeedSequence(seed).spawn(B)
    jobs = [(panel, params, s, mode, config, quantity) for s in seqs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reps = list(ex.map(_replicate, jobs))
    else:
        reps = [_replicate(j) for j in jobs]
    reps = np.vstack(reps)
    a = (1.0 - level) / 2.0
    lower = np.quantile(reps, a, axis=0)
    upper = np.quantile(reps, 1.0 - a, axis=0)
    return BootstrapResult(level, lower, upper, reps, seed)
