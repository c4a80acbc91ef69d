"""Parametric synthetic generator for two-sided test statistics.

The generator is a two-group mixture: a zero-centred Normal null and an
alternative made of two nonlocal half-Normal pieces (one per sign) whose
density carries a ``u**2`` factor, so alternative mass vanishes at zero.
Each nonlocal piece is a Maxwell density with scale ``sigma``; that gives a
closed-form M-step and an exact sampler (``sigma * sqrt(chi2_3)``).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import ConfigError, FitError, InputError, as_statistics

__all__ = [
    "GeneratorParams",
    "SyntheticDataset",
    "EmConfig",
    "EmResult",
    "eval_densities",
    "log_densities",
    "fit_em",
    "sample_dataset",
    "true_fdr",
]

log = logging.getLogger(__name__)

_PROP_MIN = 1e-6
_SCALE_MIN = 1e-6
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GeneratorParams:
    """``(pi0, sigma0, pi1n, sigma1n, sigma1p)`` of the synthetic generator."""

    pi0: float
    sigma0: float
    pi1n: float
    sigma1n: float
    sigma1p: float

    def __post_init__(self):
        for name in ("pi0", "pi1n"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("sigma0", "sigma1n", "sigma1p"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite, got {v}")

    def to_dict(self):
        return asdict(self)

    def mirrored(self):
        """Parameters of the law of ``-U``."""
        return GeneratorParams(self.pi0, self.sigma0, 1.0 - self.pi1n,
                               self.sigma1p, self.sigma1n)


@dataclass
class SyntheticDataset:
    """Statistics with known labels and (when available) true local fdr."""

    u: np.ndarray
    fdr_true: np.ndarray | None
    l: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.l.shape != self.u.shape:
            raise InputError("labels and statistics differ in length")
        if self.fdr_true is not None and self.fdr_true.shape != self.u.shape:
            raise InputError("true fdr and statistics differ in length")

    def __len__(self):
        return self.u.size


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 500
    tol: float = 1e-8
    n_restarts: int = 5

    def __post_init__(self):
        if self.max_iter < 1 or self.tol <= 0 or self.n_restarts < 1:
            raise ConfigError("EM settings must be positive")


@dataclass
class EmResult:
    params: GeneratorParams
    loglik: float
    converged: bool
    n_iter: int
    restart: int
    # log-likelihood after every iteration of the winning restart
    trace: list = field(default_factory=list, repr=False)
    # traces of all restarts, in restart order
    all_traces: list = field(default_factory=list, repr=False)


def _log_maxwell(u, sigma, sign):
    """log of (2 u^2 / sigma^2) N(u; 0, sigma) on the half-line of ``sign``."""
    out = np.full(u.shape, -np.inf)
    mask = (u < 0) if sign < 0 else (u > 0)
    x = u[mask]
    out[mask] = (math.log(2.0) + 2.0 * np.log(np.abs(x)) - 3.0 * math.log(sigma)
                 - _LOG_SQRT_2PI - 0.5 * (x / sigma) ** 2)
    return out


def _log_normal(u, sigma):
    return -math.log(sigma) - _LOG_SQRT_2PI - 0.5 * (u / sigma) ** 2


def log_densities(u, phi):
    """Component log densities weighted by mixing mass.

    Returns an array of shape ``(3, I)``: log of pi0*f0, of the negative
    alternative piece and of the positive one. Zero-mass pieces give -inf.
    """
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        w = np.log([phi.pi0, (1 - phi.pi0) * phi.pi1n, (1 - phi.pi0) * (1 - phi.pi1n)])
    return np.stack([
        w[0] + _log_normal(u, phi.sigma0),
        w[1] + _log_maxwell(u, phi.sigma1n, -1),
        w[2] + _log_maxwell(u, phi.sigma1p, +1),
    ])


def eval_densities(u, phi):
    """Null, alternative and marginal densities ``(f0, f1, f)`` at ``u``."""
    u = np.asarray(u, dtype=float)
    f0 = np.exp(_log_normal(u, phi.sigma0))
    f1 = (phi.pi1n * np.exp(_log_maxwell(np.atleast_1d(u), phi.sigma1n, -1))
          + (1 - phi.pi1n) * np.exp(_log_maxwell(np.atleast_1d(u), phi.sigma1p, +1)))
    f1 = f1.reshape(u.shape)
    f = phi.pi0 * f0 + (1 - phi.pi0) * f1
    return f0, f1, f


def true_fdr(u, phi):
    """Bayes-rule local fdr ``pi0 f0(u) / f(u)`` under the generator."""
    u = np.asarray(u, dtype=float)
    if phi.pi0 == 0:
        # f0 carries no mass; at u == 0 every piece vanishes, call it null
        return np.where(u == 0, 1.0, 0.0)
    lw = log_densities(u, phi)
    return np.clip(np.exp(lw[0] - logsumexp(lw, axis=0)), 0.0, 1.0)


def sample_dataset(phi, I, seed):
    """Draw ``I`` labelled statistics and their true fdr from ``phi``."""
    if I < 1:
        raise InputError("synthetic dataset needs at least one hypothesis")
    rng = np.random.default_rng(seed)
    # draw every stream at full length so the layout never depends on phi
    alt = rng.random(I) < (1.0 - phi.pi0)
    negative = rng.random(I) < phi.pi1n
    z = rng.standard_normal(I)
    radius = np.sqrt(rng.chisquare(3, size=I))
    u_alt = np.where(negative, -phi.sigma1n * radius, phi.sigma1p * radius)
    u = np.where(alt, u_alt, phi.sigma0 * z)
    return SyntheticDataset(u=u, fdr_true=true_fdr(u, phi), l=alt.astype(np.int8), seed=seed)


# --------------------------------------------------------------------------
# EM
# --------------------------------------------------------------------------

def _moment_start(u):
    q25, q75 = np.percentile(u, [25, 75])
    sigma0 = (q75 - q25) / 1.349
    if not sigma0 > 0:
        sigma0 = max(np.std(u), _SCALE_MIN)
    tail = np.abs(u) > 2 * sigma0
    neg, pos = u[tail & (u < 0)], u[tail & (u > 0)]
    n_tail = neg.size + pos.size
    pi1n = neg.size / n_tail if n_tail else 0.5
    sigma1n = math.sqrt(np.mean(neg ** 2) / 3) if neg.size else 2 * sigma0
    sigma1p = math.sqrt(np.mean(pos ** 2) / 3) if pos.size else 2 * sigma0
    return np.array([0.8, sigma0, pi1n, sigma1n, sigma1p])


def _clamp(theta):
    theta = theta.copy()
    theta[[0, 2]] = np.clip(theta[[0, 2]], _PROP_MIN, 1 - _PROP_MIN)
    theta[[1, 3, 4]] = np.maximum(theta[[1, 3, 4]], _SCALE_MIN)
    return theta


class _EmData:
    """Sufficient pieces of ``u`` reused by every EM iteration."""

    def __init__(self, u):
        self.u2 = u ** 2
        self.neg = u < 0
        self.pos = u > 0
        with np.errstate(divide="ignore"):
            self.log_u2 = np.log(self.u2)

    def log_components(self, theta):
        pi0, s0, pi1n, s1n, s1p = theta
        lw = np.empty((3, self.u2.size))
        lw[0] = math.log(pi0) - math.log(s0) - _LOG_SQRT_2PI - 0.5 * self.u2 / s0 ** 2
        base = math.log(2.0) - _LOG_SQRT_2PI + self.log_u2
        lw[1] = np.where(self.neg, math.log((1 - pi0) * pi1n) + base
                         - 3 * math.log(s1n) - 0.5 * self.u2 / s1n ** 2, -np.inf)
        lw[2] = np.where(self.pos, math.log((1 - pi0) * (1 - pi1n)) + base
                         - 3 * math.log(s1p) - 0.5 * self.u2 / s1p ** 2, -np.inf)
        return lw


def _em_run(data, theta, cfg):
    theta = _clamp(theta)
    trace = []
    converged = False
    prev = -np.inf
    n = data.u2.size
    for it in range(1, cfg.max_iter + 1):
        lw = data.log_components(theta)
        lse = logsumexp(lw, axis=0)
        ll = float(lse.sum())
        if not np.isfinite(ll):
            raise FitError("generator", "non-finite log-likelihood")
        trace.append(ll)
        if it > 1 and abs(ll - prev) <= cfg.tol * abs(ll):
            converged = True
            break
        prev = ll
        # E-step
        r = np.exp(lw - lse)
        s0, sn, sp = r.sum(axis=1)
        # M-step, closed forms
        new = np.empty(5)
        new[0] = s0 / n
        alt = sn + sp
        new[2] = sn / alt if alt > 0 else 0.5
        new[1] = math.sqrt(r[0] @ data.u2 / s0) if s0 > 0 else theta[1]
        new[3] = math.sqrt(r[1] @ data.u2 / (3 * sn)) if sn > 0 else theta[3]
        new[4] = math.sqrt(r[2] @ data.u2 / (3 * sp)) if sp > 0 else theta[4]
        theta = _clamp(new)
    # trace[-1] belongs to theta: the last loop body either broke right after
    # evaluating theta, or ran out of iterations after an update
    if not converged:
        lw = data.log_components(theta)
        trace.append(float(logsumexp(lw, axis=0).sum()))
    return theta, trace, converged


def fit_em(u, cfg=EmConfig(), seed=0):
    """Maximum-likelihood fit of the generator by EM with random restarts.

    Restart 0 starts from robust moment estimates; later restarts jitter
    that start multiplicatively by Uniform(0.7, 1.3). The restart with the
    highest final log-likelihood wins (ties go to the lower index).
    """
    u = as_statistics(u)
    if u.size < 10:
        raise InputError("EM needs at least 10 statistics")
    if not np.any(u != 0):
        raise FitError("generator", "all statistics are zero")
    data = _EmData(u)
    start = _moment_start(u)
    rng = np.random.default_rng(seed)
    jitters = rng.uniform(0.7, 1.3, size=(cfg.n_restarts, 5))
    best = None
    traces = []
    for k in range(cfg.n_restarts):
        theta0 = start if k == 0 else start * jitters[k]
        theta, trace, converged = _em_run(data, theta0, cfg)
        traces.append(trace)
        if best is None or trace[-1] > best[1][-1]:
            best = (theta, trace, converged, k)
    theta, trace, converged, k = best
    if not converged:
        log.warning("EM did not converge in %d iterations", cfg.max_iter)
    return EmResult(params=GeneratorParams(*map(float, theta)), loglik=trace[-1],
                    converged=converged, n_iter=len(trace), restart=k,
                    trace=trace, all_traces=traces)
