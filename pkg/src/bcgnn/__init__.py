"""Tabular imputation and label prediction on a union of two graphs.

A table with missing cells becomes a bipartite graph (rows and features as
nodes, observed cells as attributed edges) joined with a complete directed
graph over the features whose edges are gated by rank-correlation signs.
Message passing over the union imputes the hidden cells and, optionally,
predicts a per-row label from the completed row.

Typical use::

    from bcgnn import TrainConfig, fit, impute, load_csv, load_schema

    schema = load_schema("schema.json")
    dataset = load_csv("data.csv", schema)
    checkpoint = fit(dataset, TrainConfig(profile="desk", seed=0))
    result = impute(checkpoint, dataset)

The same workflow is available from the ``bcgnn`` command line tool.
"""

from .correlation import CorrMatrix, pairwise_corr, sign_indicator
from .dataio import (
    CATEGORICAL,
    CONTINUOUS,
    Column,
    Dataset,
    ScalerStats,
    Schema,
    apply_mask,
    load_csv,
    load_mask_csv,
    load_schema,
    save_csv,
    save_mask_csv,
    save_schema,
    scale_dataset,
)
from .errors import BcgnnError, ConfigError, DataError, NumericError, ShapeError
from .graph import Graph, build_graph
from .metrics import (
    EvalReport,
    embedding_space_size,
    knn_impute,
    mae_missing,
    mean_impute,
    normalized_mae,
)
from .missingness import (
    MissSpec,
    connectivity_guard,
    gen_mar,
    gen_mcar,
    gen_mnar,
)
from .model import Hyper, ModelParams, forward, init_params
from .synth import generate as generate_synthetic
from .train import (
    Checkpoint,
    Imputation,
    LabelPrediction,
    TrainConfig,
    fit,
    impute,
    impute_new,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "BcgnnError",
    "CATEGORICAL",
    "CONTINUOUS",
    "Checkpoint",
    "Column",
    "ConfigError",
    "CorrMatrix",
    "DataError",
    "Dataset",
    "EvalReport",
    "Graph",
    "Hyper",
    "Imputation",
    "LabelPrediction",
    "MissSpec",
    "ModelParams",
    "NumericError",
    "ScalerStats",
    "Schema",
    "ShapeError",
    "TrainConfig",
    "apply_mask",
    "build_graph",
    "connectivity_guard",
    "embedding_space_size",
    "fit",
    "forward",
    "gen_mar",
    "gen_mcar",
    "gen_mnar",
    "generate_synthetic",
    "impute",
    "impute_new",
    "init_params",
    "knn_impute",
    "load_checkpoint",
    "load_csv",
    "load_mask_csv",
    "load_schema",
    "mae_missing",
    "mean_impute",
    "normalized_mae",
    "pairwise_corr",
    "predict_labels",
    "save_checkpoint",
    "save_csv",
    "save_mask_csv",
    "save_schema",
    "scale_dataset",
    "sign_indicator",
]
