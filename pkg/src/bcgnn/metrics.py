"""Evaluation: imputation error, embedding-space size, and the two
classical baselines (column mean/mode and KNN) used for comparison.

All errors are computed in model scale ([0, 1] for continuous features,
category indices for categorical) over the *missing* cells only. A
continuous cell contributes |prediction - truth|; a categorical cell
contributes 0/1 mismatch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataio import CATEGORICAL, CONTINUOUS, Dataset
from .errors import ConfigError, DataError

_log = logging.getLogger(__name__)


def mae_missing(
    pred_scaled: np.ndarray, truth_scaled: np.ndarray, mask: np.ndarray, kinds
) -> tuple[float, np.ndarray]:
    """(overall, per-feature) absolute error over masked (missing) cells.

    Features with no missing cells get NaN in the per-feature vector; the
    overall value averages over all missing cells (NaN if there are none).
    """
    pred = np.asarray(pred_scaled, dtype=np.float64)
    truth = np.asarray(truth_scaled, dtype=np.float64)
    mask = np.asarray(mask)
    if pred.shape != truth.shape or pred.shape != mask.shape:
        raise DataError(
            f"shape mismatch: predictions {pred.shape}, truth {truth.shape}, mask {mask.shape}"
        )
    m = pred.shape[1]
    per_feature = np.full(m, np.nan)
    total = 0.0
    count = 0
    for j, kind in enumerate(kinds):
        miss = mask[:, j] == 0
        k = int(miss.sum())
        if k == 0:
            continue
        if kind == CONTINUOUS:
            errs = np.abs(pred[miss, j] - truth[miss, j])
        else:
            errs = (np.rint(pred[miss, j]) != np.rint(truth[miss, j])).astype(np.float64)
        per_feature[j] = errs.mean()
        total += errs.sum()
        count += k
    overall = total / count if count else float("nan")
    return overall, per_feature


def normalized_mae(model_mae: float, baseline_mae: float) -> float:
    """Model error relative to the mean-imputation baseline."""
    if not math.isfinite(baseline_mae) or baseline_mae == 0:
        return float("nan")
    return model_mae / baseline_mae


def mean_impute(dataset: Dataset) -> np.ndarray:
    """Column mean (continuous) / lowest-index mode (categorical) baseline.

    Returns a full matrix in model scale: observed cells pass through,
    missing cells get the column statistic.
    """
    if dataset.scaled is None:
        raise ConfigError("dataset must be scaled before imputing")
    out = np.array(dataset.scaled, copy=True)
    for j, col in enumerate(dataset.schema.columns):
        observed = dataset.scaled[dataset.mask[:, j] == 1, j]
        if observed.size == 0:
            raise DataError(f"column {col.name!r} has no observed entries")
        if col.kind == CONTINUOUS:
            fill = observed.mean()
        else:
            counts = np.bincount(observed.astype(np.int64), minlength=len(col.categories))
            fill = float(np.argmax(counts))  # argmax takes the lowest index on ties
        out[dataset.mask[:, j] == 0, j] = fill
    return out


def knn_impute(dataset: Dataset, k: int = 5) -> np.ndarray:
    """K-nearest-rows baseline on the scaled table.

    Row distance is the mean, over co-observed features, of the squared
    difference (continuous) or mismatch indicator (categorical); rows with
    no co-observed feature are infinitely far. A missing cell takes the
    mean (continuous) or lowest-index mode (categorical) of the k nearest
    rows observing that feature, ties broken by row index; cells with no
    usable neighbour fall back to the column statistic.
    """
    if dataset.scaled is None:
        raise ConfigError("dataset must be scaled before imputing")
    if k < 1:
        raise ConfigError("k must be >= 1")
    X = dataset.scaled
    M = dataset.mask.astype(bool)
    n, m = X.shape
    dist_sum = np.zeros((n, n))
    dist_cnt = np.zeros((n, n))
    for j, col in enumerate(dataset.schema.columns):
        obs = M[:, j]
        x = X[:, j]
        both = np.outer(obs, obs)
        if col.kind == CONTINUOUS:
            d = (x[:, None] - x[None, :]) ** 2
        else:
            d = (x[:, None] != x[None, :]).astype(np.float64)
        dist_sum += np.where(both, d, 0.0)
        dist_cnt += both
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.where(dist_cnt > 0, dist_sum / np.maximum(dist_cnt, 1), np.inf)
    np.fill_diagonal(dist, np.inf)

    fallback = mean_impute(dataset)
    out = np.array(X, copy=True)
    for j, col in enumerate(dataset.schema.columns):
        donors = np.flatnonzero(M[:, j])
        for i in np.flatnonzero(~M[:, j]):
            cand = donors[np.isfinite(dist[i, donors])]
            if cand.size == 0:
                out[i, j] = fallback[i, j]
                continue
            order = np.lexsort((cand, dist[i, cand]))  # by distance, then row index
            chosen = cand[order[:k]]
            vals = X[chosen, j]
            if col.kind == CONTINUOUS:
                out[i, j] = vals.mean()
            else:
                counts = np.bincount(vals.astype(np.int64), minlength=len(col.categories))
                out[i, j] = float(np.argmax(counts))
    return out


def embedding_space_size(V: np.ndarray, eps: float = 1.0) -> float:
    """Size of an embedding set under lossy coding at distortion eps:

        R(V) = 0.5 * log2 det(I + rows * V V^T / (eps^2 * cols))

    Computed on the smaller Gram side via Cholesky for stability.
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise DataError(f"embeddings must form a matrix, got shape {V.shape}")
    rows, cols = V.shape
    if rows == 0 or cols == 0:
        return 0.0
    c = rows / (eps * eps * cols)
    if rows <= cols:
        gram = V @ V.T
        size = rows
    else:
        gram = V.T @ V
        size = cols
    a = np.eye(size) + c * gram
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise DataError(f"embedding Gram matrix not positive definite: {exc}") from exc
    # det(A) = prod diag(L)^2, so log2 det = 2 * sum(log2 diag(L))
    return float(np.log2(np.diag(chol)).sum())


@dataclass
class EvalReport:
    """Everything the evaluation command reports, JSON-ready."""

    mae_overall: float
    mae_per_feature: list[float]
    mae_unscaled_per_feature: list[float]
    baseline_mae: float
    normalized_mae: float
    missing_cells: int
    eps: float | None = None
    r_v_feat: float | None = None
    r_v_obs: float | None = None

    def to_json(self) -> dict:
        def none_if_nan(v):
            if v is None:
                return None
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "mae_overall": none_if_nan(self.mae_overall),
            "mae_per_feature": [none_if_nan(v) for v in self.mae_per_feature],
            "mae_unscaled_per_feature": [none_if_nan(v) for v in self.mae_unscaled_per_feature],
            "baseline_mae": none_if_nan(self.baseline_mae),
            "normalized_mae": none_if_nan(self.normalized_mae),
            "missing_cells": self.missing_cells,
            "eps": self.eps,
            "r_v_feat": none_if_nan(self.r_v_feat),
            "r_v_obs": none_if_nan(self.r_v_obs),
        }
