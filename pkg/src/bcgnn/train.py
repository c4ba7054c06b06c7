"""Training, checkpointing, and inference entry points.

Each epoch runs full-batch on one table: resample the DropEdge and
attention-drop draws, forward over the retained graph, score the *dropped*
observation-feature edges against their known values (squared error for
continuous features, cross-entropy for categorical), optionally add the
label loss on the labelled training rows, backpropagate, and take one Adam
step. Dropped edges never enter the forward pass, so a prediction is never
a function of the value it is scored against.

Everything random flows from the config seed: one PCG64 stream drives
initialization then the per-epoch draws (in a fixed order), and a second
spawned stream drives the label train/eval split. Two runs with equal
(data, config, seed) are bitwise identical.

Checkpoints are JSON with float64 arrays embedded as base64 little-endian
bytes, so a save/load round trip is exact.
"""

from __future__ import annotations

import base64
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from . import numcore as nc
from .correlation import ESTIMATORS, pairwise_corr
from .dataio import (
    CATEGORICAL,
    Dataset,
    ScalerStats,
    Schema,
    scale_dataset,
    split_labels,
)
from .errors import ConfigError, DataError, NumericError
from .graph import Graph, build_graph, sample_drop_masks
from .model import (
    AGGREGATIONS,
    ForwardResult,
    Hyper,
    ModelParams,
    forward,
    init_params,
    label_dim_for,
)

_log = logging.getLogger(__name__)

PROFILES = {"paper": 20000, "desk": 2000}

CHECKPOINT_MAGIC = "bcgnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Everything that shapes a training run; JSON round-trippable."""

    profile: str = "paper"  # epoch preset: paper=20000, desk=2000
    epochs: int | None = None  # explicit override of the profile preset
    lr: float = 0.001
    r_b: float = 0.5  # observation-feature edge drop rate
    r_c: float = 0.5  # feature-pair drop rate
    a_drop: float = 0.3  # attention elementwise drop rate
    agg: str = "mean"
    estimator: str = "spearman"
    seed: int = 0
    label_task: bool = False
    label_weight: float = 1.0
    log_interval: int = 100
    ablate_interdependence: bool = False
    d_n: int = 64
    d_e: int = 64
    d_m: int = 64
    layers: int = 3
    leaky_slope: float = 0.01

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return int(self.epochs)
        return PROFILES[self.profile]

    def hyper(self) -> Hyper:
        return Hyper(
            d_n=self.d_n,
            d_e=self.d_e,
            d_m=self.d_m,
            layers=self.layers,
            agg=self.agg,
            leaky_slope=self.leaky_slope,
        )

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; pick from {sorted(PROFILES)}")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        for name in ("r_b", "r_c", "a_drop"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.agg not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.agg!r}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown correlation estimator {self.estimator!r}")
        if self.label_weight < 0:
            raise ConfigError("label_weight must be >= 0")
        if self.log_interval < 1:
            raise ConfigError("log_interval must be >= 1")
        self.hyper().validate()

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        out = cls(**data)
        out.validate()
        return out


@dataclass
class Checkpoint:
    """A trained model plus everything needed to reuse it on new rows."""

    params: ModelParams
    config: TrainConfig
    schema: Schema
    scaler: ScalerStats
    rho: np.ndarray
    corr_estimator: str
    seed: int
    epochs_trained: int
    label_scaler: tuple[float, float] | None = None  # (lo, hi) of train labels


def _check_connectivity(dataset: Dataset) -> None:
    empty_rows = np.flatnonzero(dataset.mask.sum(axis=1) == 0)
    empty_cols = np.flatnonzero(dataset.mask.sum(axis=0) == 0)
    if empty_rows.size or empty_cols.size:
        raise DataError(
            f"disconnected table: rows {empty_rows.tolist()[:5]} / columns "
            f"{empty_cols.tolist()[:5]} have no observed cells; run the "
            f"connectivity guard on the mask first"
        )


def _scale_label(y: np.ndarray, bounds: tuple[float, float] | None) -> np.ndarray:
    if bounds is None:
        return y
    lo, hi = bounds
    return (y - lo) / (hi - lo) if hi > lo else np.zeros_like(y)


def _unscale_label(y: np.ndarray, bounds: tuple[float, float] | None) -> np.ndarray:
    if bounds is None:
        return y
    lo, hi = bounds
    return y * (hi - lo) + lo if hi > lo else np.full_like(y, lo)


def imputation_loss(
    result: ForwardResult, graph: Graph, held_edges: np.ndarray
) -> tuple[nc.Tensor | None, int]:
    """Mean per-edge loss over the held-out (dropped) edges.

    Squared error for continuous features, cross-entropy for categorical.
    Returns (scalar tensor or None when no edges are held out, edge count).
    """
    held = np.flatnonzero(held_edges)
    total: nc.Tensor | None = None
    count = 0
    for j, c in enumerate(graph.cat_sizes):
        edges = held[graph.edge_feat[held] == j]
        if edges.size == 0:
            continue
        rows = graph.edge_obs[edges]
        preds = nc.gather_rows(result.feat_pred[j], rows)
        if c == 0:
            targets = graph.edge_value[edges].reshape(-1, 1)
            diff = nc.sub(preds, targets)
            term = nc.sum_all(nc.mul(diff, diff))
        else:
            term = nc.softmax_xent_sum(preds, graph.edge_value[edges].astype(np.int64))
        total = term if total is None else nc.add(total, term)
        count += edges.size
    if total is None:
        return None, 0
    return nc.scale(total, 1.0 / count), count


def label_loss(
    result: ForwardResult, y_scaled: np.ndarray, train_mask: np.ndarray, categorical: bool
) -> tuple[nc.Tensor | None, int]:
    """Mean label loss over the labelled training rows."""
    rows = np.flatnonzero(train_mask)
    if rows.size == 0:
        return None, 0
    preds = nc.gather_rows(result.label_out, rows)
    if categorical:
        term = nc.softmax_xent_sum(preds, y_scaled[rows].astype(np.int64))
    else:
        diff = nc.sub(preds, y_scaled[rows].reshape(-1, 1))
        term = nc.sum_all(nc.mul(diff, diff))
    return nc.scale(term, 1.0 / rows.size), rows.size


def _prepare(dataset: Dataset, config: TrainConfig) -> tuple[Dataset, Graph]:
    if dataset.scaled is None:
        dataset = scale_dataset(dataset)
    _check_connectivity(dataset)
    corr = pairwise_corr(dataset.scaled, dataset.mask, config.estimator)
    rho = np.zeros_like(corr.rho) if config.ablate_interdependence else corr.rho
    return dataset, build_graph(dataset, rho)


def fit(
    dataset: Dataset,
    config: TrainConfig,
    log_path=None,
    history: list | None = None,
) -> Checkpoint:
    """Train a model on one incomplete table; returns a reusable checkpoint.

    ``log_path`` (optional) receives JSON lines: a start record with graph
    statistics, then loss records every ``log_interval`` epochs plus the
    first and last. ``history``, if given, collects the same loss records.
    """
    config.validate()
    hyper = config.hyper()
    if dataset.n_features > hyper.d_n:
        raise ConfigError(
            f"{dataset.n_features} features exceed d_n={hyper.d_n}; feature one-hot "
            f"initialization requires d_n >= feature count"
        )
    dataset, graph = _prepare(dataset, config)

    y_scaled = None
    y_train = None
    label_bounds = None
    label_categorical = False
    label_dim = 0
    if config.label_task:
        if dataset.schema.label is None or dataset.y_raw is None:
            raise ConfigError("label_task requires a schema label and a labelled data column")
        label_dim = label_dim_for(dataset.schema)
        label_categorical = dataset.schema.label.kind == CATEGORICAL
        present = (
            dataset.y_mask
            if dataset.y_mask is not None
            else np.ones(dataset.n_rows, dtype=np.uint8)
        )
        ss_split = np.random.SeedSequence(config.seed).spawn(1)[0]
        y_train = (
            dataset.y_train_mask
            if dataset.y_train_mask is not None
            else split_labels(present, 0.7, ss_split)
        )
        if label_categorical:
            y_scaled = dataset.y_raw
        else:
            train_vals = dataset.y_raw[y_train == 1]
            label_bounds = (float(train_vals.min()), float(train_vals.max()))
            y_scaled = _scale_label(dataset.y_raw, label_bounds)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = init_params(
        rng, hyper, graph.n_feat, graph.d_e0, graph.cat_sizes, label_dim=label_dim
    )
    named = params.arrays()
    adam = nc.AdamState([arr for _, arr in named], lr=config.lr)

    epochs = config.resolved_epochs()
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    warned_empty = False
    try:
        if log_fh:
            start = {
                "event": "start",
                "graph": graph.stats(),
                "config": config.to_json(),
                "kernel_backend": kernels.backend_name(),
            }
            log_fh.write(json.dumps(start) + "\n")
        t0 = time.monotonic()
        for epoch in range(1, epochs + 1):
            masks = sample_drop_masks(
                graph, hyper.layers, hyper.d_n, config.r_b, config.r_c, config.a_drop, rng
            )
            result = forward(
                graph, params, masks=masks, training=True, with_label=config.label_task
            )
            imp, n_held = imputation_loss(result, graph, masks.held_edges)
            if imp is None and not warned_empty:
                _log.warning(
                    "epoch %d: no held-out edges (r_b=%g); imputation loss is 0",
                    epoch,
                    config.r_b,
                )
                warned_empty = True
            lab = None
            if config.label_task:
                lab, _ = label_loss(result, y_scaled, y_train, label_categorical)
            total = imp
            if lab is not None:
                weighted = nc.scale(lab, config.label_weight)
                total = weighted if total is None else nc.add(total, weighted)

            imp_val = float(imp.value[0, 0]) if imp is not None else 0.0
            lab_val = float(lab.value[0, 0]) if lab is not None else None
            if not math.isfinite(imp_val) or (lab_val is not None and not math.isfinite(lab_val)):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} "
                    f"(imputation={imp_val}, label={lab_val})"
                )
            if total is not None:
                result.tape.backward(total)
                nc.adam_step(
                    [arr for _, arr in named],
                    [result.leaves[name].grad for name, _ in named],
                    adam,
                )
            if epoch == 1 or epoch == epochs or epoch % config.log_interval == 0:
                record = {
                    "epoch": epoch,
                    "imputation_loss": imp_val,
                    "label_loss": lab_val,
                    "wallclock": time.monotonic() - t0,
                }
                if history is not None:
                    history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
    finally:
        if log_fh:
            log_fh.close()

    return Checkpoint(
        params=params,
        config=config,
        schema=dataset.schema,
        scaler=dataset.scaler,
        rho=graph.rho,
        corr_estimator=config.estimator,
        seed=config.seed,
        epochs_trained=epochs,
        label_scaler=label_bounds,
    )


@dataclass
class Imputation:
    """Model outputs for one table, in model scale and original units."""

    predicted_scaled: np.ndarray  # (n, m): every cell as the model sees it
    predicted_raw: np.ndarray  # (n, m): original units (categorical: index)
    filled_raw: np.ndarray  # (n, m): observed cells passed through, gaps imputed
    cat_probs: dict[int, np.ndarray]  # per categorical feature: (n, C) softmax


def _require_matching_schema(checkpoint: Checkpoint, dataset: Dataset) -> None:
    if tuple(dataset.schema.columns) != tuple(checkpoint.schema.columns):
        raise DataError("dataset schema does not match the checkpoint's feature columns")


def impute(checkpoint: Checkpoint, dataset: Dataset) -> Imputation:
    """Predict every cell with the trained model (no drops, full graph).

    The checkpoint's scaler and sign gates are reused as-is; nothing is
    re-estimated from ``dataset``.
    """
    _require_matching_schema(checkpoint, dataset)
    dataset = scale_dataset(dataset, checkpoint.scaler)
    graph = build_graph(dataset, checkpoint.rho)
    result = forward(graph, checkpoint.params, training=False)
    predicted_scaled = result.dhat_scaled(clamp=True)
    predicted_raw = checkpoint.scaler.inverse_transform(predicted_scaled)
    filled = np.where(dataset.mask == 1, dataset.raw, predicted_raw)
    return Imputation(
        predicted_scaled=predicted_scaled,
        predicted_raw=predicted_raw,
        filled_raw=filled,
        cat_probs=result.cat_probs(),
    )


def impute_new(checkpoint: Checkpoint, dataset: Dataset) -> Imputation:
    """Impute rows the model never saw in training (the inductive path).

    New rows join the bipartite graph through their observed cells; the
    scaler and the feature-interdependence gates stay frozen from
    training, so this is exactly :func:`impute` on the new table.
    """
    return impute(checkpoint, dataset)


@dataclass
class LabelPrediction:
    scaled: np.ndarray  # (n,) regression in model scale, or (n,) argmax class index
    raw: np.ndarray  # (n,) original units / class index
    probs: np.ndarray | None  # (n, C) for categorical labels


def predict_labels(checkpoint: Checkpoint, dataset: Dataset) -> LabelPrediction:
    """Run the label head over a (possibly incomplete) table."""
    if checkpoint.params.label_head_w is None:
        raise ConfigError("checkpoint was trained without a label head")
    _require_matching_schema(checkpoint, dataset)
    dataset = scale_dataset(dataset, checkpoint.scaler)
    graph = build_graph(dataset, checkpoint.rho)
    result = forward(graph, checkpoint.params, training=False, with_label=True)
    out = result.label_out.value
    if checkpoint.schema.label is not None and checkpoint.schema.label.kind == CATEGORICAL:
        classes = np.argmax(out, axis=1).astype(np.float64)
        return LabelPrediction(scaled=classes, raw=classes, probs=nc.softmax(out))
    scaled = out[:, 0]
    return LabelPrediction(
        scaled=scaled, raw=_unscale_label(scaled, checkpoint.label_scaler), probs=None
    )


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"corrupt checkpoint array: {exc}") from exc
    return np.ascontiguousarray(arr)


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    p = checkpoint.params
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": checkpoint.config.to_json(),
        "schema": checkpoint.schema.to_json(),
        "scaler": checkpoint.scaler.to_json(),
        "rho": np.asarray(checkpoint.rho, dtype=np.int8).tolist(),
        "corr_estimator": checkpoint.corr_estimator,
        "seed": checkpoint.seed,
        "epochs_trained": checkpoint.epochs_trained,
        "label_scaler": list(checkpoint.label_scaler) if checkpoint.label_scaler else None,
        "model": {
            "hyper": p.hyper.to_json(),
            "n_feat": p.n_feat,
            "d_e0": p.d_e0,
            "cat_sizes": list(p.cat_sizes),
            "label_dim": p.label_dim,
            "arrays": {name: _encode_array(arr) for name, arr in p.arrays()},
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(
            f"checkpoint version {payload.get('version')} unsupported "
            f"(this build reads version {CHECKPOINT_VERSION})"
        )
    try:
        model = payload["model"]
        hyper = Hyper.from_json(model["hyper"])
        params = init_params(
            np.random.Generator(np.random.PCG64(0)),
            hyper,
            int(model["n_feat"]),
            int(model["d_e0"]),
            tuple(int(c) for c in model["cat_sizes"]),
            label_dim=int(model["label_dim"]),
        )
        encoded = model["arrays"]
        expected = [name for name, _ in params.arrays()]
        if sorted(encoded) != sorted(expected):
            raise DataError("checkpoint parameter arrays do not match the model structure")
        for name, arr in params.arrays():
            decoded = _decode_array(encoded[name])
            if decoded.shape != arr.shape:
                raise DataError(
                    f"checkpoint array {name} has shape {decoded.shape}, expected {arr.shape}"
                )
            arr[...] = decoded
        label_scaler = payload.get("label_scaler")
        return Checkpoint(
            params=params,
            config=TrainConfig.from_json(payload["config"]),
            schema=Schema.from_json(payload["schema"]),
            scaler=ScalerStats.from_json(payload["scaler"]),
            rho=np.asarray(payload["rho"], dtype=np.int8),
            corr_estimator=str(payload["corr_estimator"]),
            seed=int(payload["seed"]),
            epochs_trained=int(payload["epochs_trained"]),
            label_scaler=tuple(label_scaler) if label_scaler else None,
        )
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"corrupt checkpoint {path}: {exc}") from exc
