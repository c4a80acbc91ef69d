"""Grenander family: empirical Normal null scale plus a monotone p-value density."""
from __future__ import annotations

import math

import numpy as np
from scipy import optimize, stats

from ..core import P_EPS, FdrFit, FitError, as_statistics

__all__ = ["least_concave_majorant", "grenander_density", "fit_grenander",
           "estimate_null_scale"]

MIN_SIZE = 50
FNDR_ITERATIONS = 3


def least_concave_majorant(x, y):
    """Knots of the least concave majorant of the points ``(x, y)``.

    ``x`` must be strictly increasing. Returns the indices of the hull knots.
    """
    hull = []
    for i in range(len(x)):
        # pop while the last knot lies on or below the chord to the new point
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            if (y[k] - y[j]) * (x[i] - x[j]) <= (y[i] - y[j]) * (x[k] - x[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.asarray(hull)


def _majorant_slopes(p, model_id):
    values, counts = np.unique(p, return_counts=True)
    if values.size < 2:
        raise FitError(model_id, "degenerate empirical CDF (fewer than two distinct p-values)")
    x = np.concatenate([[0.0], values])
    y = np.concatenate([[0.0], np.cumsum(counts) / p.size])
    knots = least_concave_majorant(x, y)
    kx, ky = x[knots], y[knots]
    return kx, np.diff(ky) / np.diff(kx)


def _left_slope(kx, slopes, where):
    # a point in (kx[j-1], kx[j]] takes slope j-1
    seg = np.searchsorted(kx, where, side="left") - 1
    return slopes[np.clip(seg, 0, slopes.size - 1)]


def grenander_density(p, at=None, model_id="G"):
    """Grenander estimate of a decreasing density on [0, 1].

    The value at a point is the left derivative of the least concave
    majorant of the empirical CDF of ``p`` (anchored at (0, 0)). Evaluated
    at the sample itself unless ``at`` is given.
    """
    p = np.clip(np.asarray(p, dtype=float), P_EPS, 1.0)
    kx, slopes = _majorant_slopes(p, model_id)
    where = p if at is None else np.clip(np.asarray(at, dtype=float), P_EPS, 1.0)
    return _left_slope(kx, slopes, where)


def _half_normal_scale(a, cutoff):
    """MLE of sigma for |u| ~ half-Normal(sigma) truncated to [0, cutoff]."""
    scale = math.sqrt(np.mean(a ** 2))
    if not scale > 0:
        return 0.0
    if not np.isfinite(cutoff):
        return scale
    z = a / scale
    c = cutoff / scale
    ss = float(np.sum(z ** 2))
    n = z.size

    def nll(t):
        s = math.exp(t)
        mass = 2 * stats.norm.cdf(c / s) - 1
        if mass <= 0:
            return np.inf
        return n * t + 0.5 * ss / s ** 2 + n * math.log(mass)

    res = optimize.minimize_scalar(nll, bounds=(-4.0, 4.0), method="bounded",
                                   options={"xatol": 1e-10})
    return scale * math.exp(res.x)


def _fit_central(a, level):
    """Truncated half-Normal fit on the ``level`` fraction of smallest |u|."""
    if level >= 1.0:
        cutoff = np.inf
        central = a
    else:
        cutoff = np.quantile(a, level)
        central = a[a <= cutoff]
    sigma = _half_normal_scale(central, cutoff)
    prob = 1.0 if not np.isfinite(cutoff) or sigma == 0 else 2 * stats.norm.cdf(cutoff / sigma) - 1
    pi0 = central.size / (a.size * prob) if prob > 0 else 1.0
    return sigma, min(pi0, 1.0)


def estimate_null_scale(u, cutoff_method="fndr", pct0=0.75):
    """Scale of the zero-centred Normal null from the central statistics."""
    a = np.abs(u)
    if cutoff_method == "pct0":
        sigma, _ = _fit_central(a, pct0)
        return sigma
    if cutoff_method == "fndr":
        level = 0.75
        for _ in range(FNDR_ITERATIONS):
            sigma, pi0 = _fit_central(a, level)
            # next cutoff: boundary of the (1 - pi0) most extreme statistics
            level = min(max(pi0, 0.1), 1.0)
        return sigma
    raise ValueError(f"unknown cutoff_method {cutoff_method!r}")


def fit_grenander(u, cutoff_method="fndr", pct0=0.75, model_id="G"):
    """Local fdr from a Grenander fit to p-values under an empirical null scale."""
    u = as_statistics(u)
    if u.size < MIN_SIZE:
        raise FitError(model_id, f"needs at least {MIN_SIZE} statistics")
    try:
        sigma = estimate_null_scale(u, cutoff_method, pct0)
    except ValueError as exc:
        raise FitError(model_id, str(exc)) from None
    if not sigma > 0:
        raise FitError(model_id, "zero null scale")
    p = 2.0 * stats.norm.sf(np.abs(u) / sigma)
    p = np.clip(p, P_EPS, 1.0)
    kx, slopes = _majorant_slopes(p, model_id)
    dens = _left_slope(kx, slopes, p)
    # the estimate at the right boundary is biased low; read f(1) off an
    # interior point at distance n^(-1/3) instead
    right = min(1.0 - u.size ** (-1.0 / 3.0), p.max())
    pi0 = min(1.0, float(_left_slope(kx, slopes, right)))
    fdr = np.minimum(1.0, pi0 / dens)
    return FdrFit(model_id, u, fdr, pi0)
