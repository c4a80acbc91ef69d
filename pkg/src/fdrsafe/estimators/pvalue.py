"""P-value family: lambda-tail pi0 estimate and a kernel density on transformed p-values."""
from __future__ import annotations

import numpy as np
from scipy import stats

from ..core import P_EPS, FdrFit, FitError
from ._smooth import NaturalSplineBasis, binned_kde, silverman_bandwidth

__all__ = ["LAMBDAS", "pi0_lambda", "estimate_pi0_lambda", "transformed_density",
           "fit_pvalue_family"]

LAMBDAS = np.round(np.arange(0.05, 0.951, 0.05), 10)
# largest p-value kept finite under probit/logit
P_MAX = 1.0 - 1e-8


def pi0_lambda(p, lambdas=LAMBDAS):
    """``#{p_i > lambda} / (I (1 - lambda))`` for every lambda, uncapped."""
    p = np.sort(np.asarray(p, dtype=float))
    above = p.size - np.searchsorted(p, lambdas, side="right")
    return above / (p.size * (1.0 - lambdas))


def _smooth_pi0(lambdas, pi0, smooth_log, n_basis=3):
    y = pi0
    if smooth_log:
        if not np.any(pi0 > 0):
            return 0.0
        y = np.log(np.maximum(pi0, P_EPS))
    basis = NaturalSplineBasis.from_data(lambdas, n_basis)
    X = basis(lambdas)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = float((basis(lambdas[-1:]) @ beta)[0])
    return float(np.exp(fitted)) if smooth_log else fitted


def _bootstrap_pi0(p, lambdas, n_boot, seed):
    """pi0(lambda*) with lambda* minimising the bootstrap MSE against min_lambda pi0."""
    n = p.size
    est = pi0_lambda(p, lambdas)
    # resampling with replacement only matters through the counts falling
    # between consecutive lambdas, which are multinomial
    edges = np.concatenate([[-np.inf], lambdas, [np.inf]])
    cell = np.histogram(p, bins=edges)[0]
    # a p-value equal to lambda is not "> lambda": histogram bins are
    # [e_k, e_k+1) so move exact ties one cell down
    ties = np.isin(p, lambdas)
    if np.any(ties):
        idx = np.searchsorted(lambdas, p[ties])
        np.add.at(cell, idx + 1, -1)
        np.add.at(cell, idx, 1)
    rng = np.random.default_rng(seed)
    boot = rng.multinomial(n, cell / n, size=n_boot)
    above = np.cumsum(boot[:, ::-1], axis=1)[:, ::-1][:, 1:]
    boot_pi0 = above / (n * (1.0 - lambdas))
    mse = np.mean((boot_pi0 - est.min()) ** 2, axis=0)
    return float(est[np.argmin(mse)])


def estimate_pi0_lambda(p, method="smoother", smooth_log_pi0=False, lambdas=LAMBDAS,
                        n_boot=100, seed=0):
    """Proportion of nulls from the lambda-tail estimator, capped to [0, 1]."""
    p = np.asarray(p, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    if method == "smoother":
        est = _smooth_pi0(lambdas, pi0_lambda(p, lambdas), smooth_log_pi0)
    elif method == "bootstrap":
        est = _bootstrap_pi0(p, lambdas, n_boot, seed)
    else:
        raise ValueError(f"unknown pi0 method {method!r}")
    return float(min(max(est, 0.0), 1.0))


def transformed_density(p, transf="probit", adj=1.5):
    """Marginal density of the p-values via a KDE of their transform."""
    p = np.clip(p, P_EPS, P_MAX)
    if transf == "probit":
        x = stats.norm.ppf(p)
        jac = stats.norm.pdf(x)
    elif transf == "logit":
        x = np.log(p) - np.log1p(-p)
        jac = p * (1.0 - p)
    else:
        raise ValueError(f"unknown transform {transf!r}")
    d = binned_kde(x, adj * silverman_bandwidth(x))
    # density of p is density of x times |dx/dp| = 1 / |dp/dx|
    with np.errstate(divide="ignore"):
        return d / jac


def fit_pvalue_family(p, pi0_method="smoother", transf="probit", adj=1.5,
                      smooth_log_pi0=False, n_boot=100, boot_seed=0, u=None,
                      model_id="Q", cache=None):
    """Local fdr ``pi0 / f(p)`` with fdr forced nondecreasing in p.

    ``u`` only supplies the statistics stored on the returned fit; it
    defaults to the p-values themselves.
    """
    p = np.asarray(p, dtype=float)
    if p.size < 2 or not np.all((p >= 0) & (p <= 1)):
        raise FitError(model_id, "invalid p-values")
    if np.all(p == p[0]):
        raise FitError(model_id, "all p-values identical")
    try:
        key = ("Q-pi0", pi0_method, bool(smooth_log_pi0) if pi0_method == "smoother" else None,
               n_boot, boot_seed)
        if cache is not None and key in cache:
            pi0 = cache[key]
        else:
            pi0 = estimate_pi0_lambda(p, pi0_method, smooth_log_pi0, n_boot=n_boot, seed=boot_seed)
            if cache is not None:
                cache[key] = pi0
        key = ("Q-density", transf, adj)
        if cache is not None and key in cache:
            dens = cache[key]
        else:
            dens = transformed_density(p, transf, adj)
            if cache is not None:
                cache[key] = dens
    except ValueError as exc:
        raise FitError(model_id, str(exc)) from None
    with np.errstate(divide="ignore", invalid="ignore"):
        fdr = np.where(dens > 0, pi0 / dens, 1.0)
    fdr = np.minimum(fdr, 1.0)
    if pi0 == 0:
        fdr = np.zeros_like(p)
    order = np.argsort(p, kind="stable")
    mono = np.empty_like(fdr)
    mono[order] = np.maximum.accumulate(fdr[order])
    return FdrFit(model_id, p if u is None else u, mono, pi0)
