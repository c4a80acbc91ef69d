"""The grid of candidate fdr models and dispatch to the three families."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..core import ConfigError, FitError, FdrSafeError, NullSpec, as_statistics, to_pvalues
from .empirical_null import fit_empirical_null
from .grenander import fit_grenander
from .pvalue import fit_pvalue_family

__all__ = ["FAMILIES", "ModelSpec", "GridConfig", "build_grid", "fit_model", "fit_grid",
           "load_grid_config"]

log = logging.getLogger(__name__)

# family code -> descriptive name
FAMILIES = {
    "L": "EmpiricalNullSpline",
    "G": "GrenanderNull",
    "Q": "PValueSmoother",
}


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(round(value, 10))
    return str(value)


@dataclass(frozen=True)
class ModelSpec:
    """One grid point: a family code plus its named parameters."""

    family: str
    params: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", tuple(self.params.items()))

    @property
    def model_id(self):
        return self.family + ":" + ",".join(f"{k}={_fmt(v)}" for k, v in self.params)

    @property
    def family_name(self):
        return FAMILIES[self.family]

    def as_dict(self):
        return {"model_id": self.model_id, "family": self.family_name,
                "params": dict(self.params)}


@dataclass
class GridConfig:
    """Parameter lists per family plus the pinned numerical settings.

    Numeric lists are deduplicated before the Cartesian product.
    """

    include_L: bool = True
    include_G: bool = True
    include_Q: bool = True
    # family L
    L_nulltype: list = field(default_factory=lambda: ["mle", "central-matching"])
    L_marginal: list = field(default_factory=lambda: ["spline", "polynomial"])
    L_pct0: list = field(default_factory=lambda: [0.0, 0.075, 0.15, 0.225, 0.3])
    L_pct: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    # family G; pct0 applies only when cutoff_method == "pct0"
    G_cutoff_method: list = field(default_factory=lambda: ["fndr", "pct0"])
    G_pct0: list = field(default_factory=lambda: [0.4, 0.55, 0.7, 0.85, 1.0])
    # family Q; smooth_log_pi0 applies only to the smoother
    Q_pi0_method: list = field(default_factory=lambda: ["smoother", "bootstrap"])
    Q_transf: list = field(default_factory=lambda: ["probit", "logit"])
    Q_adj: list = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0])
    Q_smooth_log_pi0: list = field(default_factory=lambda: [True, False])
    # pinned numerical settings
    n_bins: int = 120
    spline_df: int = 7
    n_bootstrap: int = 100
    bootstrap_seed: int = 0

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown grid settings: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self):
        return asdict(self)

    def validate(self):
        if not (self.include_L or self.include_G or self.include_Q):
            raise ConfigError("at least one family must be enabled")
        for name in ("L_pct0", "L_pct", "G_pct0"):
            vals = getattr(self, name)
            if any(not (0.0 <= float(v) <= 1.0) for v in vals):
                raise ConfigError(f"{name} values must lie in [0, 1]")
        if any(float(v) >= 0.5 for v in self.L_pct0):
            raise ConfigError("L_pct0 values must be below 0.5")
        if any(float(v) <= 0 for v in self.Q_adj):
            raise ConfigError("Q_adj values must be positive")
        if any(float(v) <= 0 for v in self.G_pct0):
            raise ConfigError("G_pct0 values must be positive")
        if self.n_bins < 10 or self.spline_df < 2 or self.n_bootstrap < 1:
            raise ConfigError("invalid pinned numerical settings")


def load_grid_config(path):
    """Read a JSON grid configuration (keys as in :class:`GridConfig`)."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read grid config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("grid config must be a JSON object")
    return GridConfig.from_dict(data)


def _unique(values):
    out = []
    for v in values:
        if v not in out:
            out.append(v)
    return out


def build_grid(cfg=None):
    """All parameter combinations of the enabled families, sorted by model id."""
    cfg = cfg or GridConfig()
    cfg.validate()
    specs = []
    if cfg.include_L:
        for nt, mg, p0, pc in itertools.product(
                _unique(cfg.L_nulltype), _unique(cfg.L_marginal),
                _unique(map(float, cfg.L_pct0)), _unique(map(float, cfg.L_pct))):
            specs.append(ModelSpec("L", (("nulltype", nt), ("marginal", mg),
                                         ("pct0", p0), ("pct", pc))))
    if cfg.include_G:
        for cm in _unique(cfg.G_cutoff_method):
            if cm == "pct0":
                specs += [ModelSpec("G", (("cutoff_method", cm), ("pct0", p0)))
                          for p0 in _unique(map(float, cfg.G_pct0))]
            else:
                specs.append(ModelSpec("G", (("cutoff_method", cm),)))
    if cfg.include_Q:
        for pm, tr, adj in itertools.product(_unique(cfg.Q_pi0_method), _unique(cfg.Q_transf),
                                             _unique(map(float, cfg.Q_adj))):
            base = (("pi0_method", pm), ("transf", tr), ("adj", adj))
            if pm == "smoother":
                specs += [ModelSpec("Q", base + (("smooth_log_pi0", bool(s)),))
                          for s in _unique(cfg.Q_smooth_log_pi0)]
            else:
                specs.append(ModelSpec("Q", base))
    if not specs:
        raise ConfigError("the model grid is empty")
    specs.sort(key=lambda s: s.model_id)
    ids = [s.model_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate model ids in grid")
    return specs


def fit_model(spec, u, null_spec=NullSpec(), grid_cfg=None, cache=None, pvalues=None):
    """Fit one grid model to ``u``.

    Raises :class:`FitError` for any failure, so callers only need to catch
    that. ``cache`` may be shared between calls on the same ``u``;
    ``pvalues`` may carry precomputed ``to_pvalues(u, null_spec)``.
    """
    cfg = grid_cfg or GridConfig()
    mid = spec.model_id
    params = dict(spec.params)
    try:
        u = as_statistics(u, min_size=2)
    except FdrSafeError as exc:
        raise FitError(mid, f"insufficient data: {exc}") from None
    try:
        with np.errstate(all="ignore"):
            if spec.family == "L":
                return fit_empirical_null(u, n_bins=cfg.n_bins, df=cfg.spline_df, model_id=mid,
                                          cache=cache, **params)
            if spec.family == "G":
                return fit_grenander(u, model_id=mid, **params)
            p = to_pvalues(u, null_spec) if pvalues is None else pvalues
            return fit_pvalue_family(p, u=u, n_boot=cfg.n_bootstrap, boot_seed=cfg.bootstrap_seed,
                                     model_id=mid, cache=cache, **params)
    except FitError as exc:
        if exc.model_id != mid:
            raise FitError(mid, exc.reason) from None
        raise
    except (ArithmeticError, ValueError, np.linalg.LinAlgError, FdrSafeError) as exc:
        raise FitError(mid, f"{type(exc).__name__}: {exc}") from None


def fit_grid(specs, u, null_spec=NullSpec(), grid_cfg=None):
    """Fit every spec to ``u``; returns ``(fits, errors)`` keyed by model id.

    Shared intermediate results (marginal fits, pi0 estimates, densities)
    are computed once per call.
    """
    fits, errors = {}, {}
    cache = {}
    pvalues = None
    if any(s.family == "Q" for s in specs):
        try:
            pvalues = to_pvalues(u, null_spec)
        except FdrSafeError:
            pvalues = None
    for spec in specs:
        try:
            fits[spec.model_id] = fit_model(spec, u, null_spec, grid_cfg, cache, pvalues)
        except FitError as exc:
            errors[spec.model_id] = exc.reason
    return fits, errors
