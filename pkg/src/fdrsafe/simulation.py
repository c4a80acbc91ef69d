"""Simulation scenarios, oracle comparators and the repetition runner."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .core import (ConfigError, FdrSafeError, NullSpec, empirical_Fdr, mse_loss)
from .estimators.grid import ModelSpec, build_grid, fit_grid, fit_model
from .generator import SyntheticDataset
from .metrics import evaluate
from .pipeline import (SafeConfig, _finish, combine, equal_weight, random_subset, score,
                       select_top, stream_seed)

__all__ = [
    "ScenarioSpec", "StudyResult", "SCENARIOS", "METHODS", "BASELINES", "METRICS",
    "gen_symmetric", "gen_asymmetric", "gen_correlated", "generate", "scenario_null",
    "symmetric_fdr", "asymmetric_fdr", "welch_t", "oracle_methods", "run_study",
    "load_scenario",
]

log = logging.getLogger(__name__)

SCENARIOS = ("symmetric", "asymmetric", "correlated")
METRICS = ("fdr_rmse", "Fdr_rmse", "brier", "pr_auc", "roc_auc", "pi0_hat")

# family defaults used as stand-alone baselines
BASELINES = {
    "EmpiricalNullSpline_default": ModelSpec("L", (("nulltype", "mle"), ("marginal", "spline"),
                                                   ("pct0", 0.225), ("pct", 0.0))),
    "GrenanderNull_default": ModelSpec("G", (("cutoff_method", "fndr"),)),
    "PValueSmoother_default": ModelSpec("Q", (("pi0_method", "smoother"), ("transf", "probit"),
                                              ("adj", 1.5), ("smooth_log_pi0", False))),
}
METHODS = ("fdrSAFE", "fdrSAFE_selection-only", "fdrSAFE_aggregation-only",
           "fdrSAFE_aggregation-all", *BASELINES, "oracle_single", "oracle_ensemble")

# (weight, lo, hi) of the Uniform pieces of the alternative
_ALT_PIECES = {
    "symmetric": ((0.5, -4.0, -1.33), (0.5, 1.33, 4.0)),
    "asymmetric": ((1 / 3, -6.0, -2.5), (2 / 3, 1.5, 4.5)),
}


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation setting.

    The fields after ``pi0`` only matter for the correlated scenario, where
    two groups of ``n_a`` and ``n_b`` samples are drawn from a multivariate
    Normal with unit variances and either block-equicorrelated
    (``cov="equicorrelated"``) or AR(1) (``cov="ar1"``) correlation ``rho``.
    """

    kind: str = "symmetric"
    I: int | None = None
    pi0: float = 0.8
    cov: str = "equicorrelated"
    rho: float = 0.3
    block_size: int = 50
    n_a: int = 10
    n_b: int = 10
    delta_mean: float = 2.0
    delta_sd: float = 0.5
    p_negative: float = 0.2

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.kind!r}")
        if self.I is None:
            object.__setattr__(self, "I", 1311 if self.kind == "correlated" else 1000)
        if self.I < 2:
            raise ConfigError("I must be at least 2")
        if not 0.0 <= self.pi0 <= 1.0:
            raise ConfigError("pi0 must lie in [0, 1]")
        if self.kind == "correlated":
            self._check_correlated()

    def _check_correlated(self):
        if self.n_a < 2 or self.n_b < 2:
            raise ConfigError("each group needs at least two samples")
        if not 0.0 <= self.p_negative <= 1.0 or self.delta_sd < 0:
            raise ConfigError("invalid offset distribution")
        if self.cov == "equicorrelated":
            if self.block_size < 1:
                raise ConfigError("block_size must be positive")
            # eigenvalues 1 - rho and 1 + (b - 1) rho
            b = min(self.block_size, self.I)
            if not (1 - self.rho > 0 and 1 + (b - 1) * self.rho > 0):
                raise ConfigError(f"equicorrelated covariance with rho={self.rho} and block "
                                  f"size {b} is not positive definite")
        elif self.cov == "ar1":
            if not abs(self.rho) < 1:
                raise ConfigError("AR(1) covariance needs |rho| < 1")
        else:
            raise ConfigError(f"unknown covariance {self.cov!r}")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)


def load_scenario(path):
    """Read a JSON scenario (keys as in :class:`ScenarioSpec`)."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("scenario config must be a JSON object")
    return ScenarioSpec.from_dict(data)


# --------------------------------------------------------------------------
# Generators
# --------------------------------------------------------------------------

def _alt_density(u, pieces):
    f1 = np.zeros_like(u)
    for w, lo, hi in pieces:
        f1 += np.where((u >= lo) & (u <= hi), w / (hi - lo), 0.0)
    return f1


def _uniform_mixture_fdr(u, pi0, pieces):
    f0 = np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    f1 = _alt_density(u, pieces)
    num = pi0 * f0
    den = num + (1 - pi0) * f1
    with np.errstate(invalid="ignore"):
        # f0 underflows far in the tails; there fdr is 0 on the support, 1 off it
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), (f1 == 0).astype(float))


def symmetric_fdr(u, pi0=0.8):
    """True local fdr of the symmetric scenario."""
    return _uniform_mixture_fdr(np.asarray(u, float), pi0, _ALT_PIECES["symmetric"])


def asymmetric_fdr(u, pi0=0.8):
    """True local fdr of the asymmetric scenario."""
    return _uniform_mixture_fdr(np.asarray(u, float), pi0, _ALT_PIECES["asymmetric"])


def _gen_uniform_mixture(spec, seed, pieces):
    rng = np.random.default_rng(seed)
    I = spec.I
    l = (rng.random(I) >= spec.pi0).astype(np.int8)
    null = rng.standard_normal(I)
    weights = np.array([w for w, _, _ in pieces])
    which = rng.choice(len(pieces), size=I, p=weights / weights.sum())
    lo = np.array([p[1] for p in pieces])[which]
    hi = np.array([p[2] for p in pieces])[which]
    alt = lo + (hi - lo) * rng.random(I)
    u = np.where(l == 1, alt, null)
    return SyntheticDataset(u, _uniform_mixture_fdr(u, spec.pi0, pieces), l, seed)


def gen_symmetric(spec, seed):
    """Normal nulls; alternatives uniform on ``[-4, -1.33]`` or ``[1.33, 4]``."""
    if spec.kind != "symmetric":
        raise ConfigError("gen_symmetric needs a symmetric scenario")
    return _gen_uniform_mixture(spec, seed, _ALT_PIECES["symmetric"])


def gen_asymmetric(spec, seed):
    """Normal nulls; alternatives on ``[-6, -2.5]`` (1/3) or ``[1.5, 4.5]`` (2/3)."""
    if spec.kind != "asymmetric":
        raise ConfigError("gen_asymmetric needs an asymmetric scenario")
    return _gen_uniform_mixture(spec, seed, _ALT_PIECES["asymmetric"])


def _correlated_noise(spec, n, rng):
    """``n`` draws (rows) of a zero-mean, unit-variance ``I``-vector."""
    I, rho = spec.I, spec.rho
    z = rng.standard_normal((n, I))
    if spec.cov == "ar1":
        x = np.empty_like(z)
        x[:, 0] = z[:, 0]
        s = math.sqrt(1 - rho * rho)
        for i in range(1, I):
            x[:, i] = rho * x[:, i - 1] + s * z[:, i]
        return x
    x = np.empty_like(z)
    for start in range(0, I, spec.block_size):
        stop = min(start + spec.block_size, I)
        b = stop - start
        cov = np.full((b, b), rho) + (1 - rho) * np.eye(b)
        x[:, start:stop] = z[:, start:stop] @ np.linalg.cholesky(cov).T
    return x


def welch_t(xa, xb):
    """Per-column ``(mean_B - mean_A) / sqrt(s_B^2 / n_B + s_A^2 / n_A)``."""
    xa, xb = np.asarray(xa, float), np.asarray(xb, float)
    se2 = xa.var(axis=0, ddof=1) / xa.shape[0] + xb.var(axis=0, ddof=1) / xb.shape[0]
    return (xb.mean(axis=0) - xa.mean(axis=0)) / np.sqrt(se2)


def gen_correlated(spec, seed):
    """Welch t statistics of two correlated Normal groups; no true fdr."""
    if spec.kind != "correlated":
        raise ConfigError("gen_correlated needs a correlated scenario")
    rng = np.random.default_rng(seed)
    I = spec.I
    l = (rng.random(I) >= spec.pi0).astype(np.int8)
    delta = rng.normal(spec.delta_mean, spec.delta_sd, I)
    d = np.where(rng.random(I) < spec.p_negative, -1.0, 1.0)
    shift = np.where(l == 1, d * delta, 0.0)
    xa = _correlated_noise(spec, spec.n_a, rng)
    xb = _correlated_noise(spec, spec.n_b, rng) + shift
    return SyntheticDataset(welch_t(xa, xb), None, l, seed)


_GENERATORS = {"symmetric": gen_symmetric, "asymmetric": gen_asymmetric,
               "correlated": gen_correlated}


def generate(spec, seed):
    return _GENERATORS[spec.kind](spec, seed)


def scenario_null(spec):
    """Null used for p-values: standard Normal, or t with ``n_a + n_b - 2`` df."""
    if spec.kind == "correlated":
        return NullSpec("t", float(spec.n_a + spec.n_b - 2))
    return NullSpec()


# --------------------------------------------------------------------------
# Oracles
# --------------------------------------------------------------------------

def oracle_methods(fits, truth, m, u, on="fdr"):
    """Single best and top-``m`` ensemble of fitted models by their true loss.

    ``fits`` maps model id to a fit on ``u``. With ``on="fdr"`` the loss is
    the MSE of the local fdr against ``truth``; with ``on="Fdr"`` it is the
    MSE of the tail Fdr against ``truth`` (e.g. the empirical Fdr).
    Returns ``(single, ensemble, losses)``.
    """
    if not fits:
        raise FdrSafeError("no fitted models for the oracles")
    if on not in ("fdr", "Fdr"):
        raise ValueError(f"unknown oracle target {on!r}")
    losses = {mid: mse_loss(getattr(f, on), truth) for mid, f in fits.items()}
    ranked = sorted(losses, key=lambda k: (losses[k], k))
    single = combine([fits[ranked[0]]], [1.0], u, method="oracle_single")
    top = ranked[:m]
    ens = combine([fits[k] for k in top], [1.0 - losses[k] for k in top], u,
                  method="oracle_ensemble")
    return single, ens, losses


# --------------------------------------------------------------------------
# Study runner
# --------------------------------------------------------------------------

@dataclass
class StudyResult:
    """Long-format metrics plus per-repetition diagnostics.

    ``rows`` holds ``(method, rep, metric, value)``; ``shares`` holds
    ``(rep, family, n_models, weight)`` for the fdrSAFE ensembles;
    ``grid_losses[r]`` and ``oracle_loss[r]`` are the true losses of every
    fitted grid model and of the single-model oracle; ``failures`` holds
    ``(method, rep, reason)``; ``calibration[method]`` pools ``(fdr_hat, l)``
    over repetitions.
    """

    scenario: ScenarioSpec
    reps: int
    seed: int
    methods: tuple
    rows: list = field(default_factory=list)
    shares: list = field(default_factory=list)
    grid_losses: list = field(default_factory=list)
    oracle_loss: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    calibration: dict = field(default_factory=dict)

    def values(self, method, metric):
        return np.array([v for m, _, k, v in self.rows if m == method and k == metric])

    def median(self, method, metric):
        v = self.values(method, metric)
        return float(np.median(v)) if v.size else float("nan")

    def summary(self):
        """Median of every metric per method, recomputed from ``rows``."""
        return {m: {k: self.median(m, k) for k in METRICS} for m in self.methods}

    def share_table(self):
        """Fraction of fdrSAFE ensemble members (pooled over reps) per family."""
        total = sum(n for _, _, n, _ in self.shares)
        out = {}
        for _, fam, n, _ in self.shares:
            out[fam] = out.get(fam, 0) + n
        return {k: v / total for k, v in sorted(out.items())} if total else {}


def _rep_seeds(master, rep):
    return stream_seed(master, 100, rep), stream_seed(master, 101, rep)


def _run_rep(args):
    spec, rep, master, methods, cfg = args
    data_seed, pipe_seed = _rep_seeds(master, rep)
    data = generate(spec, data_seed)
    u, l = data.u, data.l
    null_spec = scenario_null(spec)
    rcfg = replace(cfg, seed=pipe_seed, null_spec=null_spec, workers=1)
    specs = build_grid(rcfg.grid)
    results, failures, shares = {}, [], []
    fits, errors = fit_grid(specs, u, null_spec, rcfg.grid)

    def attempt(name, fn):
        try:
            results[name] = fn()
        except FdrSafeError as exc:
            failures.append((name, rep, str(exc)))

    scoring = None
    if "fdrSAFE" in methods or "fdrSAFE_selection-only" in methods:
        try:
            scoring = score(u, rcfg)
        except FdrSafeError as exc:
            for name in ("fdrSAFE", "fdrSAFE_selection-only"):
                if name in methods:
                    failures.append((name, rep, str(exc)))

    def safe(m):
        top = select_top(scoring.objectives, m)
        ok = {k: fits[k] for k in top if k in fits}
        return _finish(scoring, ok, {k: errors[k] for k in top if k in errors}, u)

    if scoring is not None:
        if "fdrSAFE" in methods:
            attempt("fdrSAFE", lambda: safe(rcfg.ensemble_size))
            if "fdrSAFE" in results:
                for mid, w in results["fdrSAFE"].selected:
                    shares.append((rep, mid.split(":", 1)[0], 1, w))
        if "fdrSAFE_selection-only" in methods:
            attempt("fdrSAFE_selection-only", lambda: safe(1))
    if "fdrSAFE_aggregation-only" in methods:
        ids = random_subset(fits, rcfg.ensemble_size, pipe_seed)
        attempt("fdrSAFE_aggregation-only",
                lambda: equal_weight([fits[i] for i in ids], u, "fdrSAFE_aggregation-only"))
    if "fdrSAFE_aggregation-all" in methods:
        attempt("fdrSAFE_aggregation-all",
                lambda: equal_weight([fits[i] for i in sorted(fits)], u, "fdrSAFE_aggregation-all"))
    for name, bspec in BASELINES.items():
        if name in methods:
            attempt(name, lambda b=bspec: fits.get(b.model_id)
                    or fit_model(b, u, null_spec, rcfg.grid))

    # true losses of the grid; the correlated scenario has no true fdr
    if data.fdr_true is not None:
        truth, on = data.fdr_true, "fdr"
    else:
        truth, on = empirical_Fdr(u, l), "Fdr"
    grid_losses, oracle_loss = {}, float("nan")
    if fits:
        single, ens, grid_losses = oracle_methods(fits, truth, rcfg.ensemble_size, u, on)
        oracle_loss = mse_loss(getattr(single, on), truth)
        for name, res in (("oracle_single", single), ("oracle_ensemble", ens)):
            if name in methods:
                results[name] = res
    else:
        failures += [(n, rep, "no grid model fitted") for n in ("oracle_single", "oracle_ensemble")
                     if n in methods]

    rows, calib = [], {}
    for name in methods:
        if name not in results:
            continue
        rep_ = evaluate(results[name], u, l, data.fdr_true, spec.pi0)
        d = rep_.as_dict()
        for k in METRICS:
            if d[k] is not None:
                rows.append((name, rep, k, float(d[k])))
        calib[name] = np.asarray(results[name].fdr, float)
    return rows, shares, grid_losses, oracle_loss, failures, calib, l


def run_study(scenario, reps=50, methods=METHODS, cfg=None, seed=0, workers=1):
    """Run every method on ``reps`` independent datasets of ``scenario``.

    Repetition ``r`` draws its data and pipeline seeds from ``(seed, r)``;
    results are collected in repetition order, so the output does not
    depend on ``workers``. Method failures become missing rows.
    """
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods: {unknown}")
    cfg = cfg or SafeConfig()
    methods = tuple(m for m in METHODS if m in methods)
    tasks = [(scenario, r, seed, methods, cfg) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_rep, tasks))
    else:
        outs = [_run_rep(t) for t in tasks]
    res = StudyResult(scenario, reps, seed, methods)
    pooled = {m: ([], []) for m in methods}
    for rows, shares, gl, ol, fails, calib, l in outs:
        res.rows += rows
        res.shares += shares
        res.grid_losses.append(gl)
        res.oracle_loss.append(ol)
        res.failures += fails
        for name, f in calib.items():
            pooled[name][0].append(f)
            pooled[name][1].append(l)
    for name, (fs, ls) in pooled.items():
        if fs:
            res.calibration[name] = (np.concatenate(fs), np.concatenate(ls))
    for name, rep, why in res.failures:
        log.info("rep %d: %s failed: %s", rep, name, why)
    return res
