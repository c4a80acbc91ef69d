"""Regression bases, Poisson IRLS and a binned Gaussian KDE."""
from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre
from scipy.signal import fftconvolve

from ..core import FitError


class NaturalSplineBasis:
    """Natural cubic spline basis (truncated-power form) on fixed knots.

    The basis includes the constant, so ``n_knots`` knots give ``n_knots``
    columns. Beyond the boundary knots every column is linear.
    """

    def __init__(self, knots):
        knots = np.unique(np.asarray(knots, dtype=float))
        if knots.size < 2:
            raise ValueError("natural spline needs at least two distinct knots")
        self.lo, self.hi = knots[0], knots[-1]
        self.knots = self._scale(knots)

    @classmethod
    def from_data(cls, x, n_basis):
        """Knots at evenly spaced quantiles of ``x``, boundary knots at its range."""
        return cls(np.quantile(x, np.linspace(0.0, 1.0, n_basis)))

    def _scale(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)

    def __call__(self, x):
        t = self._scale(x)
        k = self.knots
        last = k[-1]

        def d(j):
            return (np.maximum(t - k[j], 0) ** 3 - np.maximum(t - last, 0) ** 3) / (last - k[j])

        d_pen = d(len(k) - 2)
        cols = [np.ones_like(t), t] + [d(j) - d_pen for j in range(len(k) - 2)]
        return np.column_stack(cols)


class LegendreBasis:
    """Polynomial basis of a given degree, Legendre on the fitted range.

    Outside the fitted range the linear predictor is continued linearly
    (see :func:`eval_linear_predictor`), so high-degree terms never blow up.
    """

    extrapolate_linearly = True

    def __init__(self, lo, hi, degree):
        if not hi > lo:
            raise ValueError("empty range")
        self.lo, self.hi, self.degree = lo, hi, degree

    def __call__(self, x):
        t = 2.0 * (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo) - 1.0
        return legendre.legvander(t, self.degree)


def eval_linear_predictor(basis, beta, x, lo, hi):
    """``basis(x) @ beta`` with linear continuation outside ``[lo, hi]``."""
    x = np.asarray(x, dtype=float)
    if not getattr(basis, "extrapolate_linearly", False):
        return basis(x) @ beta
    inside = np.clip(x, lo, hi)
    eta = basis(inside) @ beta
    out = x != inside
    if np.any(out):
        h = 1e-6 * (hi - lo)
        ends = np.array([lo, lo + h, hi - h, hi])
        e = basis(ends) @ beta
        slope_lo = (e[1] - e[0]) / h
        slope_hi = (e[3] - e[2]) / h
        below, above = x < lo, x > hi
        eta[below] = e[0] + slope_lo * (x[below] - lo)
        eta[above] = e[3] + slope_hi * (x[above] - hi)
    return eta


def poisson_irls(X, y, max_iter=100, tol=1e-10, model_id="poisson"):
    """Poisson log-link regression by iteratively reweighted least squares."""
    y = np.asarray(y, dtype=float)
    eta = np.log(y + 0.5)
    beta, *_ = np.linalg.lstsq(X, eta, rcond=None)
    dev_old = np.inf

    def deviance(eta):
        mu = np.exp(eta)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(y > 0, y * np.log(y / mu), 0.0)
        return 2.0 * np.sum(t - (y - mu))

    eta = X @ beta
    for _ in range(max_iter):
        mu = np.exp(np.minimum(eta, 700))
        z = eta + (y - mu) / mu
        sw = np.sqrt(mu)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        step = new - beta
        # step halving keeps the deviance from increasing
        for _ in range(30):
            eta_new = X @ (beta + step)
            dev = deviance(eta_new)
            if np.isfinite(dev) and dev <= dev_old + 1e-12 * abs(dev_old if np.isfinite(dev_old) else 0):
                break
            step /= 2
        else:
            raise FitError(model_id, "Poisson regression diverged")
        beta = beta + step
        eta = eta_new
        if abs(dev_old - dev) <= tol * (abs(dev) + 0.1):
            return beta
        dev_old = dev
    raise FitError(model_id, "Poisson regression did not converge")


def silverman_bandwidth(x):
    """Silverman's rule of thumb, ``0.9 * min(sd, IQR/1.34) * n^(-1/5)``."""
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if not spread > 0:
        spread = sd if sd > 0 else abs(x[0]) if x[0] != 0 else 1.0
    return 0.9 * spread * x.size ** -0.2


def binned_kde(x, bandwidth, cut=3.0, max_grid=2 ** 15):
    """Gaussian kernel density of ``x`` evaluated at ``x``.

    Data are linearly binned onto a regular grid whose spacing is at most a
    fifth of the bandwidth; the binned counts are convolved with the kernel
    and the result is interpolated back to the data.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    lo, hi = x.min() - cut * bandwidth, x.max() + cut * bandwidth
    n_grid = int(min(max_grid, max(512, np.ceil(5 * (hi - lo) / bandwidth) + 1)))
    grid = np.linspace(lo, hi, n_grid)
    delta = grid[1] - grid[0]
    pos = (x - lo) / delta
    left = np.clip(np.floor(pos).astype(int), 0, n_grid - 2)
    frac = pos - left
    weights = np.bincount(left, 1.0 - frac, minlength=n_grid)
    weights += np.bincount(left + 1, frac, minlength=n_grid)
    half = int(np.ceil(4.0 * bandwidth / delta)) + 1
    offsets = np.arange(-half, half + 1) * delta
    kernel = np.exp(-0.5 * (offsets / bandwidth) ** 2) / (bandwidth * np.sqrt(2 * np.pi))
    dens = fftconvolve(weights, kernel, mode="same") / n
    return np.maximum(np.interp(x, grid, dens), 0.0)
