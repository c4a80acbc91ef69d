"""Empirical-null family: Poisson-regression marginal plus a Normal weighted null.

The marginal density is fitted to binned statistics by Poisson regression
on a natural-spline or polynomial basis of the bin midpoints. The weighted
null ``pi0 * N(0, sigma)`` is fitted on a central quantile interval, either
by truncated-Normal maximum likelihood or by matching a quadratic to the
log marginal (central matching).
"""
from __future__ import annotations

import math

import numpy as np
from scipy import optimize, stats

from ..core import FdrFit, FitError, as_statistics
from ._smooth import (LegendreBasis, NaturalSplineBasis, eval_linear_predictor,
                      poisson_irls)

__all__ = ["fit_empirical_null", "MarginalFit", "fit_marginal", "fit_weighted_null"]

MIN_SIZE = 50
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class MarginalFit:
    """Binned Poisson-regression estimate of the marginal density of ``u``."""

    def __init__(self, u, marginal="spline", pct=0.0, n_bins=120, df=7, model_id="L"):
        n = u.size
        lo, hi = np.quantile(u, [pct / 2, 1 - pct / 2]) if pct > 0 else (u.min(), u.max())
        if not hi > lo:
            raise FitError(model_id, "degenerate range for the marginal fit")
        edges = np.linspace(lo, hi, n_bins + 1)
        inside = u[(u >= lo) & (u <= hi)]
        counts, _ = np.histogram(inside, edges)
        mids = 0.5 * (edges[:-1] + edges[1:])
        if marginal == "spline":
            basis = NaturalSplineBasis.from_data(mids, df + 1)
        elif marginal == "polynomial":
            basis = LegendreBasis(mids[0], mids[-1], df)
        else:
            raise FitError(model_id, f"unknown marginal {marginal!r}")
        X = basis(mids)
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise FitError(model_id, "singular marginal design")
        self.beta = poisson_irls(X, counts, model_id=model_id)
        self.basis = basis
        self.lo_mid, self.hi_mid = mids[0], mids[-1]
        self.mids = mids
        self.counts = counts
        # counts are per bin of width delta out of n statistics in total
        self.log_norm = math.log(n * (edges[1] - edges[0]))

    def log_density(self, x):
        eta = eval_linear_predictor(self.basis, self.beta, x, self.lo_mid, self.hi_mid)
        return eta - self.log_norm


fit_marginal = MarginalFit


def _truncated_normal_mle(x, a, b, model_id):
    """sigma of N(0, sigma) truncated to [a, b] fitted to ``x``; returns (sigma, prob)."""
    scale = math.sqrt(np.mean(x ** 2))
    if not scale > 0:
        raise FitError(model_id, "central statistics are all zero")
    z = x / scale
    za, zb = a / scale, b / scale
    ss = float(np.sum(z ** 2))
    n = z.size

    def nll(t):
        s = math.exp(t)
        mass = stats.norm.cdf(zb / s) - stats.norm.cdf(za / s)
        if mass <= 0:
            return np.inf
        return n * t + 0.5 * ss / s ** 2 + n * math.log(mass)

    bound = 4.0
    res = optimize.minimize_scalar(nll, bounds=(-bound, bound), method="bounded",
                                   options={"xatol": 1e-10})
    if not res.success or res.x > bound - 1e-3:
        raise FitError(model_id, "truncated-Normal null fit did not converge")
    sigma = scale * math.exp(res.x)
    prob = stats.norm.cdf(b / sigma) - stats.norm.cdf(a / sigma)
    return sigma, prob


def fit_weighted_null(u, marginal_fit, nulltype="mle", pct0=0.25, model_id="L"):
    """Fit ``mass * N(0, sigma)`` on the central ``[pct0, 1 - pct0]`` interval.

    Returns ``(sigma, mass)``.
    """
    a, b = np.quantile(u, [pct0, 1 - pct0]) if pct0 > 0 else (u.min(), u.max())
    if nulltype == "mle":
        central = u[(u >= a) & (u <= b)]
        if central.size < 2 or not b > a:
            raise FitError(model_id, "empty central interval")
        sigma, prob = _truncated_normal_mle(central, a, b, model_id)
        mass = central.size / (u.size * prob)
    elif nulltype == "central-matching":
        mids = marginal_fit.mids
        sel = (mids >= a) & (mids <= b)
        if sel.sum() < 3:
            raise FitError(model_id, "empty central interval")
        x = mids[sel]
        y = marginal_fit.log_density(x)
        A = np.column_stack([np.ones_like(x), x ** 2])
        (c0, c2), *_ = np.linalg.lstsq(A, y, rcond=None)
        if not c2 < 0:
            raise FitError(model_id, "central matching gave a nonpositive null variance")
        sigma = math.sqrt(-0.5 / c2)
        mass = math.exp(c0 + math.log(sigma) + _LOG_SQRT_2PI)
    else:
        raise FitError(model_id, f"unknown nulltype {nulltype!r}")
    if not (np.isfinite(sigma) and sigma > 0 and np.isfinite(mass)):
        raise FitError(model_id, "nonpositive fitted null scale")
    return sigma, mass


def fit_empirical_null(u, nulltype="mle", marginal="spline", pct0=0.25, pct=0.0,
                       n_bins=120, df=7, model_id="L", cache=None):
    """Local fdr from an empirical Normal null and a Poisson-regression marginal.

    ``cache`` is an optional dict shared across calls on the same ``u``; the
    marginal fit depends only on ``(marginal, pct)`` and is reused.
    """
    u = as_statistics(u)
    if u.size < MIN_SIZE:
        raise FitError(model_id, f"needs at least {MIN_SIZE} statistics")
    key = ("L-marginal", marginal, pct, n_bins, df)
    if cache is not None and key in cache:
        mfit = cache[key]
    else:
        mfit = MarginalFit(u, marginal, pct, n_bins, df, model_id)
        if cache is not None:
            cache[key] = mfit
    sigma, mass = fit_weighted_null(u, mfit, nulltype, pct0, model_id)
    log_null = math.log(mass) - math.log(sigma) - _LOG_SQRT_2PI - 0.5 * (u / sigma) ** 2
    fdr = np.exp(np.minimum(log_null - mfit.log_density(u), 0.0))
    return FdrFit(model_id, u, fdr, min(1.0, mass))
