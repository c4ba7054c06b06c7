"""The graph network: message passing over the union graph plus readouts.

Per layer, three updates run in order, all through ReLU:

* messages along retained observation-feature edges, in both directions,
  from one shared linear map over CONCAT(target state, edge state, source
  state);
* feature-to-feature messages for retained, non-zero-gated ordered pairs
  (w, v): an elementwise attention vector softmaxed over the embedding
  dimensions of LeakyReLU(attn_w[w] @ CONCAT(h_w, h_v) + attn_b), scaled
  by the sign gate rho[w, v] times a learned strength scalar, times h_w
  elementwise. During training, attention entries are zeroed by the
  attention-drop draws with no renormalization;
* each node aggregates its incoming message multiset (mean by default;
  sum and max are supported) and is mapped through the shared node
  update; retained edges are then refreshed from their endpoints.

Observation nodes start as all-ones vectors, features as distinct
one-hots. After the last layer, a readout predicts every cell from
CONCAT(observation embedding, feature embedding): one shared linear head
for all continuous features, one softmax head per categorical feature.
An optional label head maps the predicted row (expected category index
for categorical cells) to the label.

Aggregation treats messages as a multiset: pairs gated to zero are not
silently included as zero vectors, so a model whose gates are all zero is
computationally identical to one without the feature graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .dataio import CATEGORICAL, CONTINUOUS, Schema
from .errors import ConfigError, DataError
from .graph import DropMasks, Graph, node_init

AGGREGATIONS = ("mean", "sum", "max")


@dataclass
class Hyper:
    """Structural hyperparameters of the network."""

    d_n: int = 64  # node embedding width
    d_e: int = 64  # edge embedding width after the first layer
    d_m: int = 64  # message width; must equal d_n so multisets pool
    layers: int = 3
    agg: str = "mean"
    leaky_slope: float = 0.01

    def validate(self) -> None:
        if min(self.d_n, self.d_e, self.d_m, self.layers) < 1:
            raise ConfigError("embedding widths and layer count must be positive")
        if self.agg not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.agg!r}; pick from {AGGREGATIONS}")
        if self.d_m != self.d_n:
            raise ConfigError(
                f"d_m ({self.d_m}) must equal d_n ({self.d_n}): node and "
                f"feature-attention messages share one multiset"
            )

    def to_json(self) -> dict:
        return {
            "d_n": self.d_n,
            "d_e": self.d_e,
            "d_m": self.d_m,
            "layers": self.layers,
            "agg": self.agg,
            "leaky_slope": self.leaky_slope,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Hyper":
        out = cls(**data)
        out.validate()
        return out


@dataclass
class LayerParams:
    msg_w: np.ndarray  # (d_m, 2 d_n + d_e_in)
    msg_b: np.ndarray  # (1, d_m)
    node_w: np.ndarray  # (d_n, d_n + d_m)
    node_b: np.ndarray  # (1, d_n)
    edge_w: np.ndarray  # (d_e, d_e_in + 2 d_n)
    edge_b: np.ndarray  # (1, d_e)
    attn_w: list[np.ndarray]  # per source feature: (d_n, 2 d_n)
    attn_b: np.ndarray  # (1, d_n)
    strength: np.ndarray  # (m * m, 1), diagonal entries unused


@dataclass
class ModelParams:
    """All trainable arrays plus the structure they were built for."""

    hyper: Hyper
    n_feat: int
    d_e0: int
    cat_sizes: tuple[int, ...]
    label_dim: int  # 0 = no label head; 1 = regression; >1 = classes
    layers: list[LayerParams] = field(default_factory=list)
    cont_head_w: np.ndarray | None = None
    cont_head_b: np.ndarray | None = None
    cat_head_w: dict[int, np.ndarray] = field(default_factory=dict)
    cat_head_b: dict[int, np.ndarray] = field(default_factory=dict)
    label_head_w: np.ndarray | None = None
    label_head_b: np.ndarray | None = None

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every trainable array with a stable name, in a fixed order."""
        out: list[tuple[str, np.ndarray]] = []
        for l, lp in enumerate(self.layers):
            out.append((f"layer{l}.msg_w", lp.msg_w))
            out.append((f"layer{l}.msg_b", lp.msg_b))
            out.append((f"layer{l}.node_w", lp.node_w))
            out.append((f"layer{l}.node_b", lp.node_b))
            out.append((f"layer{l}.edge_w", lp.edge_w))
            out.append((f"layer{l}.edge_b", lp.edge_b))
            for w in range(self.n_feat):
                out.append((f"layer{l}.attn_w[{w}]", lp.attn_w[w]))
            out.append((f"layer{l}.attn_b", lp.attn_b))
            out.append((f"layer{l}.strength", lp.strength))
        if self.cont_head_w is not None:
            out.append(("cont_head_w", self.cont_head_w))
            out.append(("cont_head_b", self.cont_head_b))
        for j in sorted(self.cat_head_w):
            out.append((f"cat_head_w[{j}]", self.cat_head_w[j]))
            out.append((f"cat_head_b[{j}]", self.cat_head_b[j]))
        if self.label_head_w is not None:
            out.append(("label_head_w", self.label_head_w))
            out.append(("label_head_b", self.label_head_b))
        return out


def init_params(
    rng: np.random.Generator,
    hyper: Hyper,
    n_feat: int,
    d_e0: int,
    cat_sizes: tuple[int, ...],
    label_dim: int = 0,
) -> ModelParams:
    """Fresh parameters: Glorot-uniform weights, zero biases, unit strengths.

    Random draws happen in the order :meth:`ModelParams.arrays` lists the
    weight matrices, so a fixed seed reproduces initialization bitwise.
    """
    hyper.validate()
    if len(cat_sizes) != n_feat:
        raise ConfigError(f"{len(cat_sizes)} category sizes for {n_feat} features")
    params = ModelParams(
        hyper=hyper, n_feat=n_feat, d_e0=d_e0, cat_sizes=tuple(cat_sizes), label_dim=label_dim
    )
    d_n, d_e, d_m = hyper.d_n, hyper.d_e, hyper.d_m
    for l in range(hyper.layers):
        d_e_in = d_e0 if l == 0 else d_e
        params.layers.append(
            LayerParams(
                msg_w=nc.glorot_uniform(rng, d_m, 2 * d_n + d_e_in),
                msg_b=np.zeros((1, d_m)),
                node_w=nc.glorot_uniform(rng, d_n, d_n + d_m),
                node_b=np.zeros((1, d_n)),
                edge_w=nc.glorot_uniform(rng, d_e, d_e_in + 2 * d_n),
                edge_b=np.zeros((1, d_e)),
                attn_w=[nc.glorot_uniform(rng, d_n, 2 * d_n) for _ in range(n_feat)],
                attn_b=np.zeros((1, d_n)),
                strength=np.ones((n_feat * n_feat, 1)),
            )
        )
    if any(c == 0 for c in cat_sizes):
        params.cont_head_w = nc.glorot_uniform(rng, 1, 2 * d_n)
        params.cont_head_b = np.zeros((1, 1))
    for j, c in enumerate(cat_sizes):
        if c > 0:
            params.cat_head_w[j] = nc.glorot_uniform(rng, c, 2 * d_n)
            params.cat_head_b[j] = np.zeros((1, c))
    if label_dim > 0:
        params.label_head_w = nc.glorot_uniform(rng, label_dim, n_feat)
        params.label_head_b = np.zeros((1, label_dim))
    return params


def label_dim_for(schema: Schema) -> int:
    if schema.label is None:
        return 0
    return len(schema.label.categories) if schema.label.kind == CATEGORICAL else 1


@dataclass
class ForwardResult:
    """Tape-backed outputs of one forward pass."""

    tape: nc.Tape
    leaves: dict[str, nc.Tensor]  # parameter name -> leaf tensor
    h_obs: nc.Tensor  # (n, d_n) final observation embeddings
    h_feat: nc.Tensor  # (m, d_n) final feature embeddings
    feat_pred: dict[int, nc.Tensor]  # per feature: (n, 1) value or (n, C) logits
    label_out: nc.Tensor | None
    cat_sizes: tuple[int, ...]
    trace: list[tuple[np.ndarray, np.ndarray]] | None = None

    def dhat_scaled(self, clamp: bool = True) -> np.ndarray:
        """Predictions for every cell in model scale; categorical -> argmax index."""
        n = self.h_obs.rows
        out = np.empty((n, len(self.cat_sizes)))
        for j, c in enumerate(self.cat_sizes):
            pred = self.feat_pred[j].value
            if c == 0:
                col = pred[:, 0]
                out[:, j] = np.clip(col, 0.0, 1.0) if clamp else col
            else:
                out[:, j] = np.argmax(pred, axis=1).astype(np.float64)
        return out

    def cat_probs(self) -> dict[int, np.ndarray]:
        """Per categorical feature: softmax probabilities, shape (n, C)."""
        return {
            j: nc.softmax(self.feat_pred[j].value)
            for j, c in enumerate(self.cat_sizes)
            if c > 0
        }


def _pair_targets(rho: np.ndarray, keep_pairs: np.ndarray | None) -> list[np.ndarray]:
    """Per source feature: gated (and retained) target indices, ascending."""
    m = rho.shape[0]
    active = rho != 0
    active[np.diag_indices(m)] = False
    if keep_pairs is not None:
        active &= keep_pairs
    return [np.flatnonzero(active[w]).astype(np.int64) for w in range(m)]


def forward(
    graph: Graph,
    params: ModelParams,
    masks: DropMasks | None = None,
    training: bool = False,
    with_label: bool = False,
    want_trace: bool = False,
) -> ForwardResult:
    """Run the network over the graph; see the module docstring.

    ``masks`` must be supplied exactly when ``training`` is true: the test
    phase runs on the full graph with no drops.
    """
    if training != (masks is not None):
        raise ConfigError("drop masks must be supplied exactly when training")
    hyper = params.hyper
    if graph.n_feat != params.n_feat:
        raise DataError(f"graph has {graph.n_feat} features, model expects {params.n_feat}")
    if graph.d_e0 != params.d_e0:
        raise DataError(
            f"graph edge feature width {graph.d_e0} does not match model ({params.d_e0})"
        )
    if with_label and params.label_head_w is None:
        raise ConfigError("model has no label head")

    tape = nc.Tape()
    leaves = {name: tape.watch(arr) for name, arr in params.arrays()}

    n, m = graph.n_obs, graph.n_feat
    if training:
        kept = np.flatnonzero(masks.keep_edges)
    else:
        kept = np.arange(graph.n_edges)
    eo = graph.edge_obs[kept]
    ef = graph.edge_feat[kept]
    e_state = tape.constant(graph.edge_init[kept])

    h_obs0, h_feat0 = node_init(n, m, hyper.d_n)
    h_obs = tape.constant(h_obs0)
    h_feat = tape.constant(h_feat0)
    pair_targets = _pair_targets(graph.rho, masks.keep_pairs if training else None)

    trace: list[tuple[np.ndarray, np.ndarray]] | None = [] if want_trace else None
    for l in range(hyper.layers):
        lp = params.layers[l]
        msg_w = leaves[f"layer{l}.msg_w"]
        msg_b = leaves[f"layer{l}.msg_b"]
        node_w = leaves[f"layer{l}.node_w"]
        node_b = leaves[f"layer{l}.node_b"]
        edge_w = leaves[f"layer{l}.edge_w"]
        edge_b = leaves[f"layer{l}.edge_b"]
        attn_b = leaves[f"layer{l}.attn_b"]
        strength = leaves[f"layer{l}.strength"]

        ho_src = nc.gather_rows(h_obs, eo)
        hf_src = nc.gather_rows(h_feat, ef)
        msg_to_feat = nc.relu(nc.linear(nc.concat_cols([hf_src, e_state, ho_src]), msg_w, msg_b))
        msg_to_obs = nc.relu(nc.linear(nc.concat_cols([ho_src, e_state, hf_src]), msg_w, msg_b))

        attn_rows: list[nc.Tensor] = []
        attn_targets: list[np.ndarray] = []
        for w in range(m):
            targets = pair_targets[w]
            if targets.size == 0:
                continue
            h_w = nc.gather_rows(h_feat, np.full(targets.size, w, dtype=np.int64))
            h_v = nc.gather_rows(h_feat, targets)
            scores = nc.leaky_relu(
                nc.linear(nc.concat_cols([h_w, h_v]), leaves[f"layer{l}.attn_w[{w}]"], attn_b),
                hyper.leaky_slope,
            )
            alpha = nc.softmax_rows(scores)
            if training:
                alpha = nc.mul(alpha, masks.attn_keep[l, w, targets])
            gate = nc.mul(
                nc.gather_rows(strength, w * m + targets),
                graph.rho[w, targets].astype(np.float64).reshape(-1, 1),
            )
            attn_rows.append(nc.mul(nc.mul(alpha, gate), h_w))
            attn_targets.append(targets)

        if attn_rows:
            feat_msgs = nc.concat_rows([msg_to_feat] + attn_rows)
            feat_seg = np.concatenate([ef] + attn_targets)
        else:
            feat_msgs = msg_to_feat
            feat_seg = ef
        agg_feat = nc.segment_reduce(feat_msgs, feat_seg, m, hyper.agg)
        agg_obs = nc.segment_reduce(msg_to_obs, eo, n, hyper.agg)

        h_obs = nc.relu(nc.linear(nc.concat_cols([h_obs, agg_obs]), node_w, node_b))
        h_feat = nc.relu(nc.linear(nc.concat_cols([h_feat, agg_feat]), node_w, node_b))
        e_state = nc.relu(
            nc.linear(
                nc.concat_cols([e_state, nc.gather_rows(h_feat, ef), nc.gather_rows(h_obs, eo)]),
                edge_w,
                edge_b,
            )
        )
        if want_trace:
            trace.append((h_obs.value.copy(), h_feat.value.copy()))

    feat_pred: dict[int, nc.Tensor] = {}
    for j, c in enumerate(graph.cat_sizes):
        pair_rows = nc.concat_cols(
            [h_obs, nc.gather_rows(h_feat, np.full(n, j, dtype=np.int64))]
        )
        if c == 0:
            feat_pred[j] = nc.linear(pair_rows, leaves["cont_head_w"], leaves["cont_head_b"])
        else:
            feat_pred[j] = nc.linear(pair_rows, leaves[f"cat_head_w[{j}]"], leaves[f"cat_head_b[{j}]"])

    label_out = None
    if with_label:
        cols = []
        for j, c in enumerate(graph.cat_sizes):
            if c == 0:
                cols.append(feat_pred[j])
            else:
                expected = nc.matmul(
                    nc.softmax_rows(feat_pred[j]),
                    np.arange(c, dtype=np.float64).reshape(-1, 1),
                )
                cols.append(expected)
        label_out = nc.linear(
            nc.concat_cols(cols), leaves["label_head_w"], leaves["label_head_b"]
        )

    return ForwardResult(
        tape=tape,
        leaves=leaves,
        h_obs=h_obs,
        h_feat=h_feat,
        feat_pred=feat_pred,
        label_out=label_out,
        cat_sizes=graph.cat_sizes,
        trace=trace,
    )
