"""Graph construction: the union of a bipartite observation-feature graph
and a complete directed feature-interdependence graph.

Observed cells become undirected observation-feature edges (traversed in
both directions during message passing) carrying the cell value as the
initial edge feature: continuous values occupy the first slot of a
zero-padded vector, categorical values a one-hot. All ordered feature
pairs (w, v), w != v, form the directed feature graph; each carries the
sign gate ``rho[w, v]`` from the correlation stage. Pairs gated to 0
contribute nothing anywhere, so they are skipped during computation.

Edges are enumerated in row-major order over the table, which together
with the exactly rounded aggregation kernels makes the forward pass
independent of row order (a permuted table gives permuted, bitwise-equal
outputs).

DropEdge happens here too: per epoch, each observation-feature edge is
retained with probability ``1 - r_b`` (the dropped ones become that
epoch's training targets), each directed feature pair independently with
probability ``1 - r_c``, and attention gets elementwise Bernoulli keep
draws at ``1 - a_drop``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .correlation import CorrMatrix
from .dataio import CATEGORICAL, CONTINUOUS, Dataset
from .errors import ConfigError, DataError

_log = logging.getLogger(__name__)


@dataclass
class Graph:
    """Everything the model needs about one table, in array form."""

    n_obs: int
    n_feat: int
    edge_obs: np.ndarray  # (E,) int64 row index per edge
    edge_feat: np.ndarray  # (E,) int64 feature index per edge
    edge_init: np.ndarray  # (E, d_e0) initial edge features
    edge_value: np.ndarray  # (E,) training target: scaled value / category index
    rho: np.ndarray  # (m, m) int8 sign gates
    d_e0: int
    cat_sizes: tuple[int, ...]  # per feature: category count, 0 = continuous

    @property
    def n_edges(self) -> int:
        return self.edge_obs.shape[0]

    def stats(self) -> dict:
        off_diag = self.rho[~np.eye(self.n_feat, dtype=bool)]
        return {
            "rows": self.n_obs,
            "features": self.n_feat,
            "observation_edges": int(self.n_edges),
            "feature_pairs": int(self.n_feat * (self.n_feat - 1)),
            "gated_positive": int((off_diag == 1).sum()),
            "gated_negative": int((off_diag == -1).sum()),
            "gated_zero": int((off_diag == 0).sum()),
        }


def build_graph(dataset: Dataset, corr: CorrMatrix | np.ndarray) -> Graph:
    """Assemble the union graph from a scaled dataset and the sign gates."""
    if dataset.scaled is None:
        raise ConfigError("dataset must be scaled before building the graph")
    rho = corr.rho if isinstance(corr, CorrMatrix) else np.asarray(corr, dtype=np.int8)
    n, m = dataset.raw.shape
    if rho.shape != (m, m):
        raise DataError(f"sign-gate matrix shape {rho.shape} does not match {m} features")

    cat_sizes = tuple(len(c.categories) for c in dataset.schema.columns)
    d_e0 = max(1, max(cat_sizes, default=0))

    obs_idx, feat_idx = np.nonzero(dataset.mask == 1)  # row-major enumeration
    edge_obs = obs_idx.astype(np.int64)
    edge_feat = feat_idx.astype(np.int64)
    edge_value = dataset.scaled[obs_idx, feat_idx]
    if not np.isfinite(edge_value).all():
        raise DataError("observed cells contain non-finite scaled values")

    edge_init = np.zeros((edge_obs.size, d_e0))
    for j, col in enumerate(dataset.schema.columns):
        sel = edge_feat == j
        if col.kind == CONTINUOUS:
            edge_init[sel, 0] = edge_value[sel]
        else:
            idx = edge_value[sel].astype(np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= cat_sizes[j]):
                raise DataError(f"column {col.name!r}: category index out of range")
            edge_init[np.flatnonzero(sel), idx] = 1.0
    return Graph(
        n_obs=n,
        n_feat=m,
        edge_obs=edge_obs,
        edge_feat=edge_feat,
        edge_init=edge_init,
        edge_value=edge_value,
        rho=rho.astype(np.int8),
        d_e0=d_e0,
        cat_sizes=cat_sizes,
    )


def node_init(n_obs: int, n_feat: int, d_n: int) -> tuple[np.ndarray, np.ndarray]:
    """Initial embeddings: all-ones for observations, one-hots for features.

    Feature one-hots need one dimension each, hence the hard requirement
    ``n_feat <= d_n``.
    """
    if n_feat > d_n:
        raise ConfigError(
            f"{n_feat} features do not fit one-hot initialization with d_n={d_n}; "
            f"raise d_n to at least the feature count"
        )
    h_obs = np.ones((n_obs, d_n))
    h_feat = np.zeros((n_feat, d_n))
    h_feat[np.arange(n_feat), np.arange(n_feat)] = 1.0
    return h_obs, h_feat


@dataclass
class DropMasks:
    """One epoch's DropEdge and attention-drop draws."""

    keep_edges: np.ndarray  # (E,) bool: retained observation-feature edges
    held_edges: np.ndarray  # (E,) bool: dropped edges, i.e. the loss targets
    keep_pairs: np.ndarray  # (m, m) bool, diagonal always False
    attn_keep: np.ndarray  # (L, m, m, d_n) float64 in {0, 1}


def drop_b(n_edges: int, r_b: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Retain each observation-feature edge with probability 1 - r_b."""
    keep = rng.random(n_edges) > r_b
    return keep, ~keep


def drop_c(n_feat: int, r_c: float, rng: np.random.Generator) -> np.ndarray:
    """Retain each directed feature pair with probability 1 - r_c."""
    keep = rng.random((n_feat, n_feat)) > r_c
    keep[np.diag_indices(n_feat)] = False
    return keep


def sample_drop_masks(
    graph: Graph,
    n_layers: int,
    d_n: int,
    r_b: float,
    r_c: float,
    a_drop: float,
    rng: np.random.Generator,
) -> DropMasks:
    """Draw one epoch's masks, in a fixed order for reproducibility."""
    keep_edges, held_edges = drop_b(graph.n_edges, r_b, rng)
    keep_pairs = drop_c(graph.n_feat, r_c, rng)
    attn_keep = (
        rng.random((n_layers, graph.n_feat, graph.n_feat, d_n)) > a_drop
    ).astype(np.float64)
    return DropMasks(
        keep_edges=keep_edges,
        held_edges=held_edges,
        keep_pairs=keep_pairs,
        attn_keep=attn_keep,
    )
