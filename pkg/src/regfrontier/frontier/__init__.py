from .estimate import PAPER_QUARTIC, CostCurve, FrontierEstimate, HeightParams
from .likelihood import BlocStats, ProfileTable, loglik_height, profile_height
from .tn import solve_sigma_u, tn_mean, tn_sample, tn_variance

__all__ = [
    "PAPER_QUARTIC",
    "BlocStats",
    "CostCurve",
    "FrontierEstimate",
    "HeightParams",
    "ProfileTable",
    "loglik_height",
    "profile_height",
    "solve_sigma_u",
    "tn_mean",
    "tn_sample",
    "tn_variance",
]
