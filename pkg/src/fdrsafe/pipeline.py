"""Selective aggregation: score models on synthetic data, keep the best, ensemble them.

The three steps are exposed separately so simulation studies can reuse the
expensive parts (grid fits on the observed data and synthetic scoring).
"""
from __future__ import annotations

import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (FdrSafeError, FitError, InputError, NullSpec, PipelineError,
                   as_statistics, fdr_to_Fdr, mse_loss)
from .estimators.grid import GridConfig, build_grid, fit_grid, fit_model
from .generator import EmConfig, eval_densities, fit_em, sample_dataset

__all__ = [
    "SafeConfig", "ObjectiveEstimate", "EnsembleResult", "ScoringResult",
    "stream_seed", "synthesize", "estimate_objectives", "select_top", "ensemble",
    "combine", "score", "run_fdrsafe", "run_ablation", "ABLATIONS",
    "objective_variance", "chi2_divergence_1d",
]

log = logging.getLogger(__name__)

ABLATIONS = ("selection_only", "aggregation_only", "aggregation_all")

# independent random streams derived from the master seed
_STREAM_EM, _STREAM_DATA, _STREAM_SUBSET = 0, 1, 2


def stream_seed(master, *key):
    """Deterministic 32-bit seed for the stream ``key`` under ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


@dataclass
class SafeConfig:
    n_synthetic: int = 10
    ensemble_size: int = 10
    synthetic_size: int | None = None
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    null_spec: NullSpec = field(default_factory=NullSpec)
    em: EmConfig = field(default_factory=EmConfig)
    workers: int = 1

    def __post_init__(self):
        if self.n_synthetic < 1:
            raise InputError("n_synthetic must be at least 1")
        if self.ensemble_size < 1:
            raise InputError("ensemble_size must be at least 1")
        if self.synthetic_size is not None and self.synthetic_size < 1:
            raise InputError("synthetic_size must be positive")
        if self.seed < 0:
            raise InputError("seed must be nonnegative")
        if self.workers < 1:
            raise InputError("workers must be at least 1")

    def to_dict(self):
        return {
            "n_synthetic": self.n_synthetic,
            "ensemble_size": self.ensemble_size,
            "synthetic_size": self.synthetic_size,
            "seed": self.seed,
            "grid": self.grid.to_dict(),
            "null_spec": self.null_spec.to_dict(),
            "em": {"max_iter": self.em.max_iter, "tol": self.em.tol,
                   "n_restarts": self.em.n_restarts},
            "workers": self.workers,
        }


@dataclass
class ObjectiveEstimate:
    """Per-model losses on the synthetic datasets and their mean."""

    model_id: str
    losses: tuple = ()
    excluded: str | None = None

    @property
    def L_hat(self):
        return float(np.mean(self.losses)) if self.excluded is None else float("nan")

    @property
    def family(self):
        return self.model_id.split(":", 1)[0]


@dataclass
class ScoringResult:
    generator: object
    datasets: list
    objectives: list

    def by_id(self):
        return {o.model_id: o for o in self.objectives}


@dataclass
class EnsembleResult:
    selected: list           # (model_id, weight) pairs
    pi0: float
    fdr: np.ndarray
    Fdr: np.ndarray
    objectives: list = field(default_factory=list)
    dropped: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)
    generator: object = None
    timings: dict = field(default_factory=dict)
    method: str = "fdrSAFE"

    @property
    def weights(self):
        return np.array([w for _, w in self.selected])

    @property
    def model_ids(self):
        return [m for m, _ in self.selected]


# --------------------------------------------------------------------------
# Step 1 and 2
# --------------------------------------------------------------------------

def synthesize(phi, n_synthetic, size, seed):
    """Draw ``n_synthetic`` datasets from ``phi`` on per-index streams."""
    return [sample_dataset(phi, size, stream_seed(seed, _STREAM_DATA, n))
            for n in range(n_synthetic)]


def _score_one(args):
    specs, u, fdr_true, null_spec, grid_cfg, loss, fit_fn = args
    fits, errors = fit_fn(specs, u, null_spec, grid_cfg)
    losses = {mid: loss(f.fdr, fdr_true) for mid, f in fits.items()}
    return losses, errors


def estimate_objectives(specs, datasets, null_spec=NullSpec(), grid_cfg=None,
                        workers=1, loss=mse_loss, fit_fn=fit_grid):
    """Mean synthetic loss of every model; models failing on any dataset are excluded.

    ``fit_fn(specs, u, null_spec, grid_cfg)`` must return ``(fits, errors)``
    keyed by model id, like :func:`fit_grid`. With ``workers > 1`` it and
    ``loss`` must be picklable. The loss table is addressed by (model id,
    dataset index), so the result does not depend on ``workers``.
    """
    if not datasets:
        raise PipelineError("scoring", "need at least one synthetic dataset")
    if not specs:
        raise PipelineError("scoring", "empty model grid")
    tasks = [(specs, d.u, d.fdr_true, null_spec, grid_cfg, loss, fit_fn) for d in datasets]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_score_one, tasks))
    else:
        results = [_score_one(t) for t in tasks]
    out = []
    for spec in specs:
        mid = spec.model_id
        reasons = [err[mid] for _, err in results if mid in err]
        if reasons:
            out.append(ObjectiveEstimate(mid, (), f"failed on {len(reasons)} synthetic "
                                                   f"dataset(s): {reasons[0]}"))
        else:
            out.append(ObjectiveEstimate(mid, tuple(res[mid] for res, _ in results)))
    if all(o.excluded for o in out):
        raise PipelineError("scoring", "every model failed on the synthetic data")
    return out


def select_top(objectives, m):
    """Ids of the ``m`` non-excluded models with the smallest estimated loss."""
    ok = [o for o in objectives if o.excluded is None]
    if not ok:
        raise PipelineError("selection", "no eligible models")
    ok.sort(key=lambda o: (o.L_hat, o.model_id))
    return [o.model_id for o in ok[:m]]


# --------------------------------------------------------------------------
# Step 3
# --------------------------------------------------------------------------

def combine(fits, weights, u, method="ensemble"):
    """Weighted average of fitted models; ``fits`` and ``weights`` are aligned."""
    if not fits:
        raise PipelineError("ensemble", "no models to combine")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not w.sum() > 0:
        raise PipelineError("ensemble", "weights must be nonnegative with a positive sum")
    w = w / w.sum()
    stack = np.stack([f.fdr for f in fits])
    # convex combination, clipped to the component envelope to absorb rounding
    fdr = np.clip(w @ stack, stack.min(axis=0), stack.max(axis=0))
    pi0 = float(np.clip(w @ np.array([f.pi0 for f in fits]), 0.0, 1.0))
    return EnsembleResult(selected=[(f.model_id, float(wi)) for f, wi in zip(fits, w)],
                          pi0=pi0, fdr=fdr, Fdr=fdr_to_Fdr(u, fdr), method=method)


def ensemble(fits, objectives, u, dropped=None):
    """Ensemble with weights proportional to ``1 - L_hat``.

    ``fits`` maps model id to its fit on the observed data; ``objectives``
    maps model id to its :class:`ObjectiveEstimate` (or is a sequence of them).
    """
    if not isinstance(objectives, dict):
        objectives = {o.model_id: o for o in objectives}
    if not fits:
        raise PipelineError("ensemble", "every selected model failed on the observed data")
    ids = list(fits)
    w = [1.0 - objectives[mid].L_hat for mid in ids]
    res = combine([fits[mid] for mid in ids], w, u, method="fdrSAFE")
    res.dropped = dict(dropped or {})
    return res


def _fit_selected(ids, u, cfg):
    specs = {s.model_id: s for s in build_grid(cfg.grid)}
    fits, dropped = {}, {}
    for mid in ids:
        try:
            fits[mid] = fit_model(specs[mid], u, cfg.null_spec, cfg.grid)
        except FitError as exc:
            log.info("selected model %s failed on observed data: %s", mid, exc.reason)
            dropped[mid] = exc.reason
    return fits, dropped


# --------------------------------------------------------------------------
# Full runs
# --------------------------------------------------------------------------

def score(u, cfg, timings=None):
    """Steps 1 and 2: fit the generator, draw datasets, score the grid."""
    timings = {} if timings is None else timings
    u = as_statistics(u, min_size=2)
    specs = build_grid(cfg.grid)
    t0 = time.perf_counter()
    try:
        em = fit_em(u, cfg.em, seed=stream_seed(cfg.seed, _STREAM_EM))
    except FdrSafeError as exc:
        raise PipelineError("generator", str(exc)) from None
    t1 = time.perf_counter()
    size = cfg.synthetic_size or u.size
    datasets = synthesize(em.params, cfg.n_synthetic, size, cfg.seed)
    t2 = time.perf_counter()
    objectives = estimate_objectives(specs, datasets, cfg.null_spec, cfg.grid, cfg.workers)
    t3 = time.perf_counter()
    timings.update(generator=t1 - t0, synthesis=t2 - t1, scoring=t3 - t2)
    return ScoringResult(em, datasets, objectives)


def _finish(scoring, fits, dropped, u, method="fdrSAFE"):
    res = ensemble(fits, scoring.objectives, u, dropped)
    res.method = method
    res.objectives = scoring.objectives
    res.excluded = {o.model_id: o.excluded for o in scoring.objectives if o.excluded}
    res.generator = scoring.generator
    return res


def run_fdrsafe(u, cfg=None):
    """Fit the generator, score the grid, and ensemble the top models on ``u``."""
    cfg = cfg or SafeConfig()
    u = as_statistics(u, min_size=2)
    timings = {}
    scoring = score(u, cfg, timings)
    t0 = time.perf_counter()
    top = select_top(scoring.objectives, cfg.ensemble_size)
    fits, dropped = _fit_selected(top, u, cfg)
    res = _finish(scoring, fits, dropped, u)
    timings["ensemble"] = time.perf_counter() - t0
    res.timings = timings
    return res


def equal_weight(fits, u, method):
    return combine(fits, np.ones(len(fits)), u, method=method)


def random_subset(ids, m, seed):
    """Seeded uniform subset of ``min(m, len(ids))`` ids, in id order."""
    rng = np.random.default_rng(stream_seed(seed, _STREAM_SUBSET))
    ids = sorted(ids)
    pick = rng.choice(len(ids), size=min(m, len(ids)), replace=False)
    return [ids[i] for i in sorted(pick)]


def run_ablation(u, cfg=None, variant="selection_only", observed_fits=None):
    """Ablations isolating selection (top-1) or aggregation (equal weights).

    ``observed_fits`` may pass precomputed ``(fits, errors)`` of the whole
    grid on ``u``.
    """
    cfg = cfg or SafeConfig()
    if variant not in ABLATIONS:
        raise InputError(f"unknown ablation {variant!r}")
    u = as_statistics(u, min_size=2)
    if variant == "selection_only":
        res = run_fdrsafe(u, replace(cfg, ensemble_size=1))
        res.method = "fdrSAFE_selection-only"
        return res
    if observed_fits is None:
        observed_fits = fit_grid(build_grid(cfg.grid), u, cfg.null_spec, cfg.grid)
    fits, errors = observed_fits
    if not fits:
        raise PipelineError("ensemble", "every model failed on the observed data")
    if variant == "aggregation_only":
        ids = random_subset(fits, cfg.ensemble_size, cfg.seed)
        name = "fdrSAFE_aggregation-only"
    else:
        ids = sorted(fits)
        name = "fdrSAFE_aggregation-all"
    res = equal_weight([fits[i] for i in ids], u, name)
    res.excluded = dict(errors)
    return res


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------

def objective_variance(est):
    """Estimated variance of ``L_hat``: sample variance of the losses over N."""
    n = len(est.losses)
    if n < 2:
        raise InputError("variance of the objective needs at least two synthetic datasets")
    # exact rational arithmetic, so constant losses give exactly zero
    return float(statistics.variance(est.losses) / n)


def chi2_divergence_1d(phi_g, phi_p, n_mc=100_000, seed=0, return_se=False):
    """Monte Carlo Pearson chi-square divergence of one statistic's marginals.

    Estimates ``E_P[(f_G(u) / f_P(u) - 1)^2]`` with ``u`` drawn from ``phi_p``.
    """
    if n_mc < 1000:
        raise InputError("n_mc must be at least 1000")
    u = sample_dataset(phi_p, n_mc, seed).u
    fg = eval_densities(u, phi_g)[2]
    fp = eval_densities(u, phi_p)[2]
    terms = (fg / fp - 1.0) ** 2
    est = float(terms.mean())
    if return_se:
        return est, float(terms.std(ddof=1) / np.sqrt(n_mc))
    return est
