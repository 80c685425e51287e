"""Normal distribution truncated below at zero.

``TN(mu, sigma^2)`` here always means N(mu, sigma^2) conditioned on being
non-negative, with ``mu`` and ``sigma`` the parameters of the parent normal.
"""

from __future__ import annotations

import numpy as np
from scipy import special

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# below this standardized location the closed-form variance loses digits
_CF_SWITCH = -8.0
_CF_DEPTH = 80


def log_phi(x):
    return -0.5 * np.square(x) - _LOG_SQRT_2PI


def log_Phi(x):
    """ln Φ(x), accurate in the far left tail."""
    return special.log_ndtr(x)


def inv_mills(x):
    """λ(x) = φ(x)/Φ(x)."""
    return np.exp(log_phi(x) - special.log_ndtr(x))


def _tail_variance(a):
    # Var(Z | Z > a) for large a via the Laplace continued fraction
    # Q(a)/φ(a) = 1/(a + 1/(a + 2/(a + ...))).  With t = 1/(a + s) and
    # s = 2/(a + 3/(a + ...)) the variance is t (s - t), free of cancellation.
    a = np.asarray(a, dtype=float)
    s = np.zeros_like(a)
    for k in range(_CF_DEPTH, 1, -1):
        s = k / (a + s)
    t = 1.0 / (a + s)
    return t * (s - t)


def _std_variance(r):
    """Variance of the standardized TN with truncation at -r."""
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    far = r < _CF_SWITCH
    if far.any():
        lam = inv_mills(r[~far])
        out[~far] = 1.0 - r[~far] * lam - lam * lam
        out[far] = _tail_variance(-r[far])
    else:
        lam = inv_mills(r)
        out[...] = 1.0 - r * lam - lam * lam
    return out


def tn_variance(mu, sigma):
    """Variance of TN(mu, sigma^2): sigma^2 [1 - r λ(r) - λ(r)^2], r = mu/sigma."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    out = sigma * sigma * _std_variance(mu / sigma)
    return out[()] if out.ndim == 0 else out


def tn_mean(mu, sigma):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    out = mu + sigma * inv_mills(mu / sigma)
    return out[()] if out.ndim == 0 else out


def tn_logpdf(x, mu, sigma):
    x = np.asarray(x, dtype=float)
    z = (x - mu) / sigma
    out = np.where(x >= 0, log_phi(z) - np.log(sigma) - log_Phi(mu / sigma), -np.inf)
    return out[()] if out.ndim == 0 else out


def tn_sample(mu, sigma, size=None, rng=None):
    """Inverse-CDF draws from TN(mu, sigma^2); stable for any mu/sigma.

    Works on the survival scale in logs: Z = -Φ^{-1}(V Φ(r)), computed as
    ``-ndtri_exp(log V + log Φ(r))`` so that far-tail truncation stays exact.
    """
    rng = np.random.default_rng(rng)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    shape = np.broadcast_shapes(mu.shape, sigma.shape) if size is None else size
    v = rng.random(shape)
    # guard log(0)
    v = np.where(v > 0, v, np.finfo(float).tiny)
    z = -special.ndtri_exp(np.log(v) + log_Phi(mu / sigma))
    return mu + sigma * z


def solve_sigma_u(mu, target_variance, rtol=1e-10, max_iter=200):
    """Scale σ with ``tn_variance(mu, σ) == target_variance``.

    Vectorized bisection over [1e-8, 10 sqrt(target) + |mu|]; the variance is
    increasing in σ at fixed mu.  Raises for non-positive targets.
    """
    mu = np.asarray(mu, dtype=float)
    target = np.asarray(target_variance, dtype=float)
    if np.any(~(target > 0)):
        raise ValueError("target variance must be positive")
    mu, target = np.broadcast_arrays(mu, target)
    lo = np.full(mu.shape, 1e-8)
    hi = 10.0 * np.sqrt(target) + np.abs(mu)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        above = tn_variance(mu, mid) > target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(hi - lo <= rtol * hi):
            break
    out = 0.5 * (lo + hi)
    return out[()] if out.ndim == 0 else out
