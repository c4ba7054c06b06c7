"""Synthetic benchmark tables with planted feature interdependence.

Rows draw independent latent factors, and each column follows exactly one
factor: continuous columns apply a monotone transform of their factor
(direction alternating, so the table holds both positively and negatively
correlated pairs) plus Gaussian noise; categorical columns quantile-bin a
noisy copy of their factor (binning is itself monotone, so every planted
dependency is monotone); the label is linear in the first factor plus noise.

Tables with at least five columns assign one factor per column PAIR, so
each column has exactly one strongly rank-correlated partner and is
unrelated to everything else. That layout separates imputers sharply: the
sign-gated feature graph routes information within pairs, while for a
nearest-row imputer all other columns act as metric decoys — neighbours
close in the decoy columns tell nothing about the target's partner factor.
Half the columns are ordinal categoricals, where a whole-column mode (or a
decoy-confused neighbour vote) misses most cells but the partner column
pins the level down. Smaller tables fall back to a single factor.

With ``independent=True`` every column (and the label) is instead an
independent uniform draw: no structure to find, rank correlations near 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import CATEGORICAL, CONTINUOUS, Column, Dataset, Schema
from .errors import ConfigError

_TRANSFORMS = (
    ("identity", lambda z: z),
    ("square", lambda z: z * z),
    ("sqrt", np.sqrt),
    ("logistic", lambda z: 1.0 / (1.0 + np.exp(-6.0 * (z - 0.5)))),
)

NOISE_SD = 0.08
CAT_NOISE_SD = 0.12
LABEL_NOISE_SD = 0.1


@dataclass
class SynthResult:
    schema: Schema
    features: np.ndarray  # (n, m) raw values; categorical cells hold indices
    labels: np.ndarray  # (n,)
    meta: dict


def _plan_columns(m: int) -> list[Column]:
    n_cat = m // 2 if m >= 6 else (1 if m >= 3 else 0)
    cols: list[Column] = []
    for j in range(m - n_cat):
        cols.append(Column(name=f"f{j}", kind=CONTINUOUS))
    for idx in range(n_cat):
        j = m - n_cat + idx
        n_levels = 3 if idx % 2 == 0 else 4
        cols.append(
            Column(
                name=f"c{j}",
                kind=CATEGORICAL,
                categories=tuple(f"lvl{i}" for i in range(n_levels)),
            )
        )
    return cols


def _factor_of_column(m: int) -> list[int]:
    """Which latent factor drives each column: one factor under 5 columns,
    otherwise one factor per column pair (the last pair absorbs an odd
    trailing column, so every factor keeps at least two members)."""
    if m < 5:
        return [0] * m
    factors = [j // 2 for j in range(m)]
    if m % 2 == 1:
        factors[-1] = factors[-2]
    return factors


def _quantile_bin(scores: np.ndarray, n_levels: int) -> np.ndarray:
    edges = np.quantile(scores, np.linspace(0, 1, n_levels + 1)[1:-1])
    return np.searchsorted(edges, scores, side="right").astype(np.float64)


def generate(n: int, m: int, seed: int, independent: bool = False) -> SynthResult:
    """One synthetic table with labels; deterministic per (n, m, seed)."""
    if n < 2 or m < 2:
        raise ConfigError(f"need at least a 2x2 table, got n={n}, m={m}")
    rng = np.random.Generator(np.random.PCG64(seed))
    columns = _plan_columns(m)
    schema = Schema(columns=tuple(columns), label=Column(name="target", kind=CONTINUOUS))
    X = np.empty((n, m))
    meta_cols = []

    if independent:
        for j, col in enumerate(columns):
            if col.kind == CONTINUOUS:
                X[:, j] = rng.random(n)
                meta_cols.append({"name": col.name, "source": "uniform"})
            else:
                X[:, j] = rng.integers(0, len(col.categories), size=n).astype(np.float64)
                meta_cols.append({"name": col.name, "source": "uniform-categorical"})
        y = rng.random(n)
        meta = {"independent": True, "n": n, "m": m, "seed": seed, "columns": meta_cols}
        return SynthResult(schema=schema, features=X, labels=y, meta=meta)

    factor_of = _factor_of_column(m)
    n_factors = max(factor_of) + 1
    z = rng.random((n, n_factors))
    member_index = [0] * n_factors  # position within the column's factor group
    for j, col in enumerate(columns):
        f = factor_of[j]
        rank = member_index[f]
        member_index[f] += 1
        zf = z[:, f]
        if col.kind == CONTINUOUS:
            t_name, t_fn = _TRANSFORMS[rank % len(_TRANSFORMS)]
            base = t_fn(zf)
            decreasing = rank % 2 == 1
            if decreasing:
                base = 1.0 - base
            X[:, j] = base + NOISE_SD * rng.standard_normal(n)
            meta_cols.append(
                {
                    "name": col.name,
                    "factor": f,
                    "transform": t_name,
                    "decreasing": decreasing,
                    "noise_sd": NOISE_SD,
                }
            )
        else:
            scores = zf + CAT_NOISE_SD * rng.standard_normal(n)
            X[:, j] = _quantile_bin(scores, len(col.categories))
            meta_cols.append(
                {
                    "name": col.name,
                    "factor": f,
                    "levels": len(col.categories),
                    "noise_sd": CAT_NOISE_SD,
                }
            )
    y = 2.0 * z[:, 0] - 0.5 + LABEL_NOISE_SD * rng.standard_normal(n)
    meta = {
        "independent": False,
        "n": n,
        "m": m,
        "seed": seed,
        "latent": f"{n_factors} x uniform(0,1)",
        "label": f"2*z0 - 0.5 + {LABEL_NOISE_SD}*normal",
        "columns": meta_cols,
    }
    return SynthResult(schema=schema, features=X, labels=y, meta=meta)


def as_dataset(result: SynthResult, with_labels: bool = True) -> Dataset:
    """Wrap a synthetic table as a fully observed Dataset."""
    n, m = result.features.shape
    return Dataset(
        schema=result.schema,
        raw=result.features.copy(),
        mask=np.ones((n, m), dtype=np.uint8),
        y_raw=result.labels.copy() if with_labels else None,
        y_mask=np.ones(n, dtype=np.uint8) if with_labels else None,
    )
