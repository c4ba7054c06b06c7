"""Pairwise rank correlation between features and the sign gate built on it.

Correlations are estimated pairwise-complete: for features (u, v) only the
rows where both are observed enter the estimate. Spearman is the Pearson
correlation of average ranks (ties get the mean of the positions they
occupy), which also covers tied data correctly; for tie-free vectors it
agrees with the classical ``1 - 6 * sum(d^2) / (n (n^2 - 1))`` formula.
Kendall is the tau-b variant.

A pair with fewer than two complete rows, or with zero variance on either
side, has no defined correlation; it is stored as NaN and gated to 0.

The sign gate maps a correlation S to an integer in {-1, 0, +1}: 0 when
|S| < 0.1 (or undefined), otherwise the sign of S.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.stats

from .errors import ConfigError

_log = logging.getLogger(__name__)

ESTIMATORS = ("spearman", "pearson", "kendall")
SIGN_THRESHOLD = 0.1


def average_ranks(x) -> np.ndarray:
    """Ranks 1..n, ties replaced by the average of the tied positions."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"average_ranks expects a vector, got shape {x.shape}")
    n = x.size
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson(x, y) -> float:
    """Plain Pearson correlation; NaN when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        return float("nan")
    return float((xc * yc).sum() / denom)


def spearman(x, y) -> float:
    """Spearman rank correlation: Pearson of average ranks."""
    return pearson(average_ranks(x), average_ranks(y))


def kendall(x, y) -> float:
    """Kendall tau-b (tie-adjusted)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    return float(scipy.stats.kendalltau(x, y).statistic)


_ESTIMATOR_FN = {"spearman": spearman, "pearson": pearson, "kendall": kendall}


def sign_indicator(values: np.ndarray) -> np.ndarray:
    """Map correlations to int8 gates: 0 if |S| < 0.1 or undefined, else sign(S)."""
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros(values.shape, dtype=np.int8)
    defined = np.isfinite(values)
    strong = defined & (np.abs(values) >= SIGN_THRESHOLD)
    out[strong & (values > 0)] = 1
    out[strong & (values < 0)] = -1
    return out


@dataclass
class CorrMatrix:
    """Symmetric pairwise correlations, their sign gates, and pair counts."""

    values: np.ndarray  # (m, m) float64, NaN where undefined
    rho: np.ndarray  # (m, m) int8 in {-1, 0, 1}
    pair_counts: np.ndarray  # (m, m) int64: complete rows per pair
    estimator: str


def pairwise_corr(D: np.ndarray, M: np.ndarray, estimator: str = "spearman") -> CorrMatrix:
    """Pairwise-complete correlation matrix over an incomplete table."""
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown correlation estimator {estimator!r}; pick from {ESTIMATORS}")
    fn = _ESTIMATOR_FN[estimator]
    D = np.asarray(D, dtype=np.float64)
    M = np.asarray(M).astype(bool)
    if D.shape != M.shape or D.ndim != 2:
        raise ValueError(f"data {D.shape} and mask {M.shape} must be matching matrices")
    m = D.shape[1]
    values = np.full((m, m), np.nan)
    counts = np.zeros((m, m), dtype=np.int64)
    degenerate = 0
    for u in range(m):
        for v in range(u, m):
            both = M[:, u] & M[:, v]
            k = int(both.sum())
            counts[u, v] = counts[v, u] = k
            if k < 2:
                degenerate += 1
                continue
            s = fn(D[both, u], D[both, v])
            if not np.isfinite(s):
                degenerate += 1
                continue
            values[u, v] = values[v, u] = s
    if degenerate:
        _log.info("correlation: %d feature pairs undefined (gated to 0)", degenerate)
    return CorrMatrix(values=values, rho=sign_indicator(values), pair_counts=counts, estimator=estimator)


def save_corr_csv(path, corr: CorrMatrix, feature_names) -> None:
    """Write the correlation matrix with a name header row/column."""
    names = list(feature_names)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + names)
        for i, name in enumerate(names):
            writer.writerow([name] + [repr(float(v)) for v in corr.values[i]])
