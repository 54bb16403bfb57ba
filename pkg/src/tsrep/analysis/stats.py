"""Rank correlation and bootstrap equivalence-group ranking."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata
from scipy.stats import t as t_dist

from ..evaluation.metrics import auroc_single

EXACT_MAX_N = 8


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    return float(np.clip((a @ b) / math.sqrt((a @ a) * (b @ b)), -1.0, 1.0))


def _t_pvalue(r: float, n: int, alternative: str) -> float:
    if abs(r) >= 1.0:
        return 0.0 if alternative == "two-sided" or (r > 0) == (alternative == "greater") else 1.0
    stat = r * math.sqrt((n - 2) / (1.0 - r * r))
    if alternative == "two-sided":
        return float(2.0 * t_dist.sf(abs(stat), n - 2))
    return float(t_dist.sf(stat, n - 2) if alternative == "greater" else t_dist.cdf(stat, n - 2))


def _exact_pvalue(rx: np.ndarray, ry: np.ndarray, r: float, alternative: str) -> float:
    """Permutation p-value over all n! orderings of ry."""
    hits, total = 0, 0
    tol = 1e-12
    for perm in itertools.permutations(ry):
        rp = _pearson(rx, np.asarray(perm))
        total += 1
        if alternative == "two-sided":
            hits += abs(rp) >= abs(r) - tol
        elif alternative == "greater":
            hits += rp >= r - tol
        else:
            hits += rp <= r + tol
    return hits / total


def spearman(x: Sequence[float], y: Sequence[float], method: str = "t", alternative: str = "two-sided") -> tuple:
    """Spearman's rank correlation with average ranks for ties.

    ``method``: "t" (Student-t approximation, the conventional default of
    statistics packages), "exact" (permutation over all n! orderings,
    n <= 8), or "auto" (exact for n <= 8, else t). ``alternative``:
    "two-sided", "greater" or "less". For n = 5 and a perfect monotone
    pair the exact one-sided p is 1/120.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D of equal length")
    n = len(x)
    if n < 3:
        raise ValueError("spearman needs at least 3 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("constant series has no rank correlation")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    rx, ry = rankdata(x), rankdata(y)
    r = _pearson(rx, ry)
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "t"
    if method == "t":
        p = _t_pvalue(r, n, alternative)
    elif method == "exact":
        if n > EXACT_MAX_N:
            raise ValueError(f"exact permutation p-value limited to n <= {EXACT_MAX_N}")
        p = _exact_pvalue(rx, ry, r, alternative)
    else:
        raise ValueError(f"unknown method {method!r}")
    return r, p


# ---------------------------------------------------------------------------
# bootstrap ranking


@dataclass
class RankTable:
    names: list
    estimates: list  # point estimates (higher is better after sign handling)
    ranks: list
    groups: list  # list of lists of model names, best group first
    resamples: int
    confidence: float
    metric: str
    extra: dict = field(default_factory=dict)


def _metric_fn(metric: str):
    if metric == "auroc":

        def fn(preds, labels):
            vals = []
            for j in range(labels.shape[1]):
                col = labels[:, j]
                npos = int(col.sum())
                if 0 < npos < len(col):
                    vals.append(auroc_single(preds[:, j], col))
            return float(np.mean(vals)) if vals else float("nan")

        return fn, 1.0
    if metric == "mae":
        # higher-is-better convention: negate the error
        return (lambda preds, labels: float(np.mean(np.abs(preds - labels)))), -1.0
    raise ValueError(f"unknown metric {metric!r}")


def bootstrap_rank(
    reports: Sequence,
    names: Optional[Sequence[str]] = None,
    resamples: int = 1000,
    confidence: float = 0.95,
    seed: int = 0,
) -> RankTable:
    """Equivalence-group ranks from a paired bootstrap over test samples.

    The best remaining model (point estimate) opens a group; every other
    remaining model whose percentile CI of (best - model) contains 0 joins
    it. The group's rank is 1 + the number of models in better groups.
    All models share the same resampled index sets.
    """
    if not reports:
        raise ValueError("no reports to rank")
    names = list(names) if names is not None else [f"model{i}" for i in range(len(reports))]
    labels = np.asarray(reports[0].labels, dtype=np.float64)
    labels = labels[:, None] if labels.ndim == 1 else labels
    metric = reports[0].metric
    for r in reports[1:]:
        other = np.asarray(r.labels, dtype=np.float64)
        if other.shape != reports[0].labels.shape or not np.array_equal(other.reshape(labels.shape), labels):
            raise ValueError("reports do not share an aligned test set")
        if r.metric != metric:
            raise ValueError("reports mix metrics")
    preds = []
    for r in reports:
        p = np.asarray(r.predictions, dtype=np.float64)
        preds.append(p[:, None] if p.ndim == 1 else p)
    fn, sign = _metric_fn(metric)
    point = np.array([sign * fn(p, labels) for p in preds])
    n = len(labels)
    rng = np.random.default_rng(seed)
    boot = np.empty((resamples, len(preds)))
    for b in range(resamples):
        idx = rng.integers(0, n, n)
        lab = labels[idx]
        for m, p in enumerate(preds):
            boot[b, m] = sign * fn(p[idx], lab)
    lo_q, hi_q = 100 * (1 - confidence) / 2, 100 * (1 + confidence) / 2

    ranks = [0] * len(preds)
    groups = []
    remaining = list(range(len(preds)))
    placed = 0
    while remaining:
        best = max(remaining, key=lambda m: (point[m], -m))
        group = [best]
        for m in remaining:
            if m == best:
                continue
            diff = boot[:, best] - boot[:, m]
            diff = diff[~np.isnan(diff)]
            if len(diff) == 0 or np.all(diff == 0):
                group.append(m)
                continue
            lo, hi = np.percentile(diff, [lo_q, hi_q])
            if lo <= 0.0 <= hi:
                group.append(m)
        for m in group:
            ranks[m] = placed + 1
        groups.append([names[m] for m in sorted(group)])
        placed += len(group)
        remaining = [m for m in remaining if m not in group]
    return RankTable(names, [float(sign * v) for v in point], ranks, groups, resamples, confidence, metric)
