"""Shared types and the elementary false-discovery-rate arithmetic.

Every vector in this package is indexed by hypothesis: position ``i`` in the
statistics, labels and fdr estimates always refers to the same test.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

__all__ = [
    "FdrSafeError",
    "InputError",
    "ConfigError",
    "FitError",
    "PipelineError",
    "NullSpec",
    "FdrFit",
    "as_statistics",
    "as_labels",
    "to_pvalues",
    "fdr_to_Fdr",
    "empirical_Fdr",
    "mse_loss",
    "P_EPS",
]

# lower clamp for p-values before probit/logit/log transforms
P_EPS = 1e-300


class FdrSafeError(Exception):
    """Base class for all package errors."""


class InputError(FdrSafeError, ValueError):
    """Malformed user input (non-finite statistics, length mismatch, ...)."""


class ConfigError(FdrSafeError, ValueError):
    """Invalid configuration (empty grid, bad covariance, ...)."""


class FitError(FdrSafeError):
    """A single model could not be fitted; the caller excludes it."""

    def __init__(self, model_id, reason):
        self.model_id = model_id
        self.reason = reason
        super().__init__(f"{model_id}: {reason}")


class PipelineError(FdrSafeError):
    """A pipeline stage failed as a whole."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def as_statistics(u, min_size=1):
    """Validate and convert test statistics to a 1-d float array."""
    arr = np.asarray(u, dtype=float)
    if arr.ndim != 1:
        raise InputError("statistics must be one-dimensional")
    if arr.size < min_size:
        raise InputError(f"need at least {min_size} statistics, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InputError("statistics must be finite")
    return arr


def as_labels(l, n=None):
    arr = np.asarray(l)
    if arr.ndim != 1:
        raise InputError("labels must be one-dimensional")
    if not np.all((arr == 0) | (arr == 1)):
        raise InputError("labels must be 0 (null) or 1 (not null)")
    if n is not None and arr.size != n:
        raise InputError(f"length mismatch: {arr.size} labels for {n} statistics")
    return arr.astype(np.int8)


def _same_length(a, b, what):
    if a.shape != b.shape:
        raise InputError(f"length mismatch in {what}: {a.size} vs {b.size}")


@dataclass(frozen=True)
class NullSpec:
    """Theoretical null used to turn statistics into two-sided p-values.

    ``kind`` is ``"normal"`` (standard Normal) or ``"t"``; ``df`` is required
    for the latter.
    """

    kind: str = "normal"
    df: float | None = None

    def __post_init__(self):
        if self.kind not in ("normal", "t"):
            raise ConfigError(f"unknown null kind {self.kind!r}")
        if self.kind == "t":
            if self.df is None or not np.isfinite(self.df) or self.df <= 0:
                raise ConfigError("t null needs a positive finite df")
        elif self.df is not None:
            raise ConfigError("df only applies to the t null")

    @classmethod
    def from_df(cls, df=None):
        """t null when degrees of freedom are given, standard Normal otherwise."""
        return cls() if df is None else cls("t", float(df))

    def sf(self, x):
        if self.kind == "t":
            return stats.t.sf(x, self.df)
        return stats.norm.sf(x)

    def to_dict(self):
        return {"kind": self.kind, "df": self.df}


def to_pvalues(u, null_spec=NullSpec()):
    """Two-sided p-values ``2 * (1 - F(|u|))`` under ``null_spec``."""
    u = as_statistics(u)
    # sf avoids the cancellation of 1 - cdf in the tails
    p = 2.0 * null_spec.sf(np.abs(u))
    return np.clip(p, 0.0, 1.0)


def _tail_index(u):
    """Per-index start of the tail set in ascending |u| order.

    Returns ``order`` (ascending |u|) and ``start`` such that the tail set of
    hypothesis ``i`` is ``order[start[i]:]``; equal |u| share a tail set.
    """
    a = np.abs(u)
    order = np.argsort(a, kind="stable")
    start = np.searchsorted(a[order], a, side="left")
    return order, start


def fdr_to_Fdr(u, fdr):
    """Tail-area Fdr: mean of local fdr over ``{i' : |u_i'| >= |u_i|}``."""
    u = as_statistics(u)
    fdr = np.asarray(fdr, dtype=float)
    _same_length(u, fdr, "fdr_to_Fdr")
    order, start = _tail_index(u)
    # suffix sums over the ascending-|u| ordering
    suffix = np.cumsum(fdr[order][::-1])[::-1]
    count = u.size - start
    return np.clip(suffix[start] / count, 0.0, 1.0)


def empirical_Fdr(u, l):
    """Observed fraction of null hypotheses in each tail set."""
    u = as_statistics(u)
    l = as_labels(l, u.size)
    order, start = _tail_index(u)
    nulls = np.cumsum((l[order] == 0)[::-1].astype(np.int64))[::-1]
    count = u.size - start
    return nulls[start] / count


def mse_loss(fdr_hat, fdr_true):
    """Mean squared error between two fdr vectors; lies in [0, 1]."""
    a = np.asarray(fdr_hat, dtype=float)
    b = np.asarray(fdr_true, dtype=float)
    _same_length(a, b, "mse_loss")
    if a.size == 0:
        raise InputError("mse_loss of empty vectors")
    return float(np.mean((a - b) ** 2))


@dataclass
class FdrFit:
    """Output of one fdr model on one statistics vector.

    ``Fdr`` is derived lazily from ``u`` and ``fdr``.
    """

    model_id: str
    u: np.ndarray = field(repr=False)
    fdr: np.ndarray = field(repr=False)
    pi0: float

    def __post_init__(self):
        self.fdr = np.asarray(self.fdr, dtype=float)
        if self.fdr.shape != np.shape(self.u):
            raise FitError(self.model_id, "fdr vector has the wrong length")
        if not np.all(np.isfinite(self.fdr)) or not np.isfinite(self.pi0):
            raise FitError(self.model_id, "non-finite fdr or pi0 estimate")
        self.fdr = np.clip(self.fdr, 0.0, 1.0)
        self.pi0 = float(min(max(self.pi0, 0.0), 1.0))

    @cached_property
    def Fdr(self):
        return fdr_to_Fdr(self.u, self.fdr)
