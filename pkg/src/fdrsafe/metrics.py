"""Accuracy, ranking and calibration metrics for fdr estimates with known labels.

Labels follow the package convention: ``l_i = 1`` for a non-null (truly
differential) hypothesis and ``0`` for a null one.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .core import InputError, as_labels, as_statistics, empirical_Fdr, fdr_to_Fdr

__all__ = [
    "EvalReport", "CalibrationPoint", "CalibrationCurve", "ClassificationReport",
    "CUTOFF_RULES", "evaluate", "evaluate_arrays", "roc_auc", "pr_auc", "brier_score",
    "local_calibration", "default_calibration_edges", "wilson_interval",
    "global_calibration", "classify", "nearest_rank_percentile", "bootstrap_metrics",
]

CUTOFF_RULES = ("oracle_pi0", "estimated_pi0", "standard_0.2", "fdr_hat_0.05")


@dataclass
class EvalReport:
    """Metrics of one estimate. AUCs are ``None`` when only one class is present."""

    fdr_rmse: float | None
    Fdr_rmse: float
    brier: float
    pr_auc: float | None
    roc_auc: float | None
    pi0_hat: float
    pi0_error: float | None

    def as_dict(self):
        return asdict(self)


def _fdr_vector(fdr_hat, n=None):
    f = np.asarray(fdr_hat, dtype=float)
    if f.ndim != 1 or (n is not None and f.size != n):
        raise InputError("fdr estimates must be a vector matching the statistics")
    if not np.all(np.isfinite(f)):
        raise InputError("fdr estimates must be finite")
    return f


def roc_auc(fdr_hat, l):
    """Area under the ROC curve of the score ``1 - fdr_hat``.

    Mann-Whitney form: the fraction of (non-null, null) pairs ordered
    correctly, ties counting one half. Returns ``None`` for a single class.
    """
    f = _fdr_vector(fdr_hat)
    l = as_labels(l, f.size)
    n1 = int(l.sum())
    n0 = l.size - n1
    if n1 == 0 or n0 == 0:
        return None
    # ranking -fdr keeps exact ties that 1 - fdr could merge by rounding
    ranks = stats.rankdata(-f)
    # rank sums are multiples of 1/2, hence exact in double precision
    u_stat = ranks[l == 1].sum() - n1 * (n1 + 1) / 2
    return float(u_stat / (n1 * n0))


def pr_auc(fdr_hat, l):
    """Step-interpolated area under the precision-recall curve.

    Hypotheses enter in increasing ``fdr_hat``; tied estimates enter together,
    and each recall increment is weighted by the precision at that step.
    """
    f = _fdr_vector(fdr_hat)
    l = as_labels(l, f.size)
    n1 = int(l.sum())
    if n1 == 0 or n1 == l.size:
        return None
    order = np.argsort(f, kind="stable")
    fs, ls = f[order], l[order].astype(np.int64)
    # last position of every tie group
    last = np.flatnonzero(np.append(fs[1:] != fs[:-1], True))
    tp = np.cumsum(ls)[last]
    k = last + 1
    recall_step = np.diff(np.concatenate([[0], tp])) / n1
    return float(np.sum(recall_step * tp / k))


def brier_score(fdr_hat, l):
    """Mean squared distance between ``1 - fdr_hat`` and the labels."""
    f = _fdr_vector(fdr_hat)
    l = as_labels(l, f.size)
    return float(np.mean((1.0 - f - l) ** 2))


def evaluate_arrays(fdr_hat, u, l, fdr_true=None, pi0_hat=float("nan"), pi0_true=None,
                    Fdr_hat=None):
    """:func:`evaluate` on plain arrays."""
    u = as_statistics(u)
    f = _fdr_vector(fdr_hat, u.size)
    l = as_labels(l, u.size)
    F = fdr_to_Fdr(u, f) if Fdr_hat is None else _fdr_vector(Fdr_hat, u.size)
    fdr_rmse = None
    if fdr_true is not None:
        t = _fdr_vector(fdr_true, u.size)
        fdr_rmse = float(np.sqrt(np.mean((f - t) ** 2)))
    Fdr_rmse = float(np.sqrt(np.mean((F - empirical_Fdr(u, l)) ** 2)))
    pi0_error = None if pi0_true is None else float(pi0_hat - pi0_true)
    return EvalReport(fdr_rmse, Fdr_rmse, brier_score(f, l), pr_auc(f, l), roc_auc(f, l),
                      float(pi0_hat), pi0_error)


def evaluate(fit, u, l, fdr_true=None, pi0_true=None):
    """Metrics of a fitted model or ensemble (anything with ``fdr`` and ``pi0``).

    ``pi0_error`` is ``pi0_hat - pi0_true`` and is ``None`` without a truth.
    """
    return evaluate_arrays(fit.fdr, u, l, fdr_true, fit.pi0, pi0_true,
                           getattr(fit, "Fdr", None))


# --------------------------------------------------------------------------
# Calibration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationPoint:
    x: float
    y: float
    n: int
    ci_lo: float
    ci_hi: float


@dataclass
class CalibrationCurve:
    kind: str
    points: list = field(default_factory=list)

    def rows(self):
        return [asdict(p) for p in self.points]

    @property
    def x(self):
        return np.array([p.x for p in self.points])

    @property
    def y(self):
        return np.array([p.y for p in self.points])


def wilson_interval(k, n, level=0.95):
    """Wilson score interval for ``k`` successes out of ``n``."""
    if n == 0:
        return 0.0, 1.0
    z = stats.norm.ppf(0.5 + level / 2)
    phat = k / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def default_calibration_edges(n_interior=20):
    """``[0, 0.01]``, ``n_interior`` even bins over ``(0.01, 0.99]``, then ``(0.99, 1]``."""
    return np.concatenate([[0.0], np.linspace(0.01, 0.99, n_interior + 1), [1.0]])


def local_calibration(fdr_hat, l, edges=None, n_interior=20, level=0.95):
    """Binned mean estimate against the observed null fraction.

    The first bin is closed, ``[e0, e1]``; the others are ``(e_k, e_k+1]``.
    Empty bins are omitted.
    """
    f = _fdr_vector(fdr_hat)
    l = as_labels(l, f.size)
    edges = default_calibration_edges(n_interior) if edges is None else np.asarray(edges, float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise InputError("calibration edges must be strictly increasing")
    if f.size and (f.min() < edges[0] or f.max() > edges[-1]):
        raise InputError("fdr estimates fall outside the calibration edges")
    which = np.clip(np.searchsorted(edges, f, side="left") - 1, 0, edges.size - 2)
    curve = CalibrationCurve("local")
    for b in range(edges.size - 1):
        sel = which == b
        n = int(sel.sum())
        if n == 0:
            continue
        k = int(np.sum(l[sel] == 0))
        lo, hi = wilson_interval(k, n, level)
        curve.points.append(CalibrationPoint(float(f[sel].mean()), k / n, n, lo, hi))
    return curve


def global_calibration(fdr_hat, l, level=0.95):
    """Estimated against observed global FDR over every threshold ``c``.

    For each unique estimate ``c`` (ascending), ``x`` is the mean estimate
    and ``y`` the null fraction among ``{i : fdr_hat_i <= c}``. Running sums
    are exact so ``x`` is the correctly rounded mean.
    """
    f = _fdr_vector(fdr_hat)
    l = as_labels(l, f.size)
    if f.size == 0:
        raise InputError("global calibration needs at least one estimate")
    order = np.argsort(f, kind="stable")
    fs, nulls = f[order], (l[order] == 0)
    last = np.flatnonzero(np.append(fs[1:] != fs[:-1], True))
    curve = CalibrationCurve("global")
    total, k, start = Fraction(0), 0, 0
    for end in last:
        for j in range(start, end + 1):
            total += Fraction(float(fs[j]))
            k += int(nulls[j])
        start = end + 1
        n = end + 1
        lo, hi = wilson_interval(k, n, level)
        curve.points.append(CalibrationPoint(float(total / n), k / n, n, lo, hi))
    return curve


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------

@dataclass
class ClassificationReport:
    cutoff_rule: str
    cutoff_value: float | None
    global_FDR: float
    sensitivity: float
    true_discoveries: int
    false_discoveries: int

    def as_dict(self):
        return asdict(self)


def nearest_rank_percentile(x, q):
    """Nearest-rank ``100 q``-th percentile: the ``ceil(q n)``-th smallest (at least the first)."""
    x = np.sort(np.asarray(x, dtype=float))
    if x.size == 0:
        raise InputError("percentile of an empty vector")
    if not 0.0 <= q <= 1.0:
        raise InputError("percentile level must lie in [0, 1]")
    rank = max(1, math.ceil(q * x.size - 1e-12))
    return float(x[rank - 1])


def _fdr_hat_cutoff(f, target):
    # running mean of the sorted estimates is nondecreasing, so the admissible
    # thresholds form a prefix; take its largest member
    order = np.sort(f)
    last = np.flatnonzero(np.append(order[1:] != order[:-1], True))
    means = np.cumsum(order)[last] / (last + 1)
    ok = np.flatnonzero(means <= target)
    return None if ok.size == 0 else float(order[last[ok[-1]]])


def classify(fdr_hat, l, rule, pi0_hat=None, pi0_true=None, target=0.05, standard=0.2):
    """Reject ``fdr_hat_i <= c`` for the cutoff ``c`` given by ``rule``.

    Rules: ``oracle_pi0`` (the ``(1 - pi0_true)`` percentile of the
    estimates), ``estimated_pi0`` (same with ``pi0_hat``), ``standard_0.2``
    (the fixed cutoff ``standard``) and ``fdr_hat_0.05`` (the largest
    threshold whose mean estimate among rejections is at most ``target``).
    """
    f = _fdr_vector(fdr_hat)
    l = as_labels(l, f.size)
    if rule == "oracle_pi0":
        if pi0_true is None:
            raise InputError("oracle_pi0 rule needs the true pi0")
        c = nearest_rank_percentile(f, 1.0 - pi0_true)
    elif rule == "estimated_pi0":
        if pi0_hat is None:
            raise InputError("estimated_pi0 rule needs an estimated pi0")
        c = nearest_rank_percentile(f, 1.0 - pi0_hat)
    elif rule == "standard_0.2":
        c = float(standard)
    elif rule == "fdr_hat_0.05":
        c = _fdr_hat_cutoff(f, target)
    else:
        raise InputError(f"unknown cutoff rule {rule!r}")
    reject = np.zeros(f.size, bool) if c is None else f <= c
    td = int(np.sum(reject & (l == 1)))
    fd = int(np.sum(reject & (l == 0)))
    n_alt = int(l.sum())
    fdr_glob = fd / (td + fd) if td + fd else 0.0
    sens = td / n_alt if n_alt else 0.0
    return ClassificationReport(rule, c, fdr_glob, sens, td, fd)


# --------------------------------------------------------------------------
# Bootstrap
# --------------------------------------------------------------------------

def bootstrap_metrics(fdr_hat, u, l, fdr_true=None, pi0_hat=float("nan"), pi0_true=None,
                      n_boot=1000, seed=0):
    """Metrics recomputed on hypotheses resampled with replacement.

    Replicate ``b`` uses its own stream spawned from ``seed``. Returns a dict
    of metric name to an array of ``n_boot`` values (``nan`` where undefined).
    """
    u = as_statistics(u)
    f = _fdr_vector(fdr_hat, u.size)
    l = as_labels(l, u.size)
    t = None if fdr_true is None else _fdr_vector(fdr_true, u.size)
    names = ("fdr_rmse", "Fdr_rmse", "brier", "pr_auc", "roc_auc")
    out = {k: np.full(n_boot, np.nan) for k in names}
    for b, child in enumerate(np.random.SeedSequence(seed).spawn(n_boot)):
        idx = np.random.default_rng(child).integers(0, u.size, u.size)
        rep = evaluate_arrays(f[idx], u[idx], l[idx], None if t is None else t[idx],
                              pi0_hat, pi0_true)
        for k in names:
            v = getattr(rep, k)
            if v is not None:
                out[k][b] = v
    return out
