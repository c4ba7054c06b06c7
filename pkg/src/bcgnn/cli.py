"""Command-line interface.

Subcommands cover the full workflow: ``synth`` (make a benchmark table),
``genmask`` (draw a missingness mask), ``train``, ``impute``, ``eval``,
and ``predict``. Exit codes: 0 success, 2 usage or configuration error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, metrics, missingness, synth
from .errors import ConfigError, DataError, NumericError
from .train import (
    TrainConfig,
    fit,
    impute,
    impute_new,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
)

_log = logging.getLogger(__name__)


def _write_json(data: dict, path: str | None) -> None:
    text = json.dumps(data, indent=2)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_synth(args) -> int:
    result = synth.generate(args.n, args.m, args.seed, independent=args.independent)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_schema(result.schema, out / "schema.json")
    dataio.save_csv(out / "data.csv", result.schema, result.features, y_values=result.labels)
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(result.meta, fh, indent=2)
        fh.write("\n")
    print(json.dumps({"out": str(out), "rows": args.n, "features": args.m}))
    return 0


def cmd_genmask(args) -> int:
    schema = dataio.load_schema(args.schema)
    dataset = dataio.load_csv(args.data, schema)
    n, m = dataset.raw.shape
    if args.mechanism == "mcar":
        mask, spec = missingness.gen_mcar(n, m, args.rate, args.seed)
    else:
        if not (dataset.mask == 1).all():
            raise DataError(
                f"{args.mechanism.upper()} generation requires fully observed data; "
                f"{int((dataset.mask == 0).sum())} cells are already missing"
            )
        gen = missingness.gen_mar if args.mechanism == "mar" else missingness.gen_mnar
        mask, spec = gen(dataset.raw, args.rate, args.seed)
    repairs: list[dict] = []
    if not args.no_guard:
        mask, repairs = missingness.connectivity_guard(mask, seed=args.seed)
    dataio.save_mask_csv(args.out, mask, schema.feature_names)
    sidecar = spec.to_json()
    sidecar["guard_repairs"] = repairs
    with open(str(args.out) + ".misspec.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    print(
        json.dumps(
            {
                "mask": str(args.out),
                "mechanism": args.mechanism,
                "empirical_missing_rate": float((mask == 0).mean()),
                "guard_repairs": len(repairs),
            }
        )
    )
    return 0


def _build_train_config(args) -> TrainConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    overrides = {
        "profile": args.profile,
        "epochs": args.epochs,
        "seed": args.seed,
        "lr": args.lr,
        "agg": args.agg,
        "estimator": args.estimator,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if args.label_task:
        data["label_task"] = True
    if args.ablate_interdependence:
        data["ablate_interdependence"] = True
    return TrainConfig.from_json(data)


def cmd_train(args) -> int:
    schema = dataio.load_schema(args.schema)
    dataset = dataio.load_csv(args.data, schema)
    if args.mask:
        dataset = dataio.apply_mask(dataset, dataio.load_mask_csv(args.mask, schema))
    config = _build_train_config(args)
    checkpoint = fit(dataset, config, log_path=args.log)
    save_checkpoint(checkpoint, args.out)
    print(
        json.dumps(
            {
                "checkpoint": str(args.out),
                "epochs": checkpoint.epochs_trained,
                "seed": checkpoint.seed,
            }
        )
    )
    return 0


def cmd_impute(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = dataio.load_csv(args.data, checkpoint.schema)
    if args.mask:
        dataset = dataio.apply_mask(dataset, dataio.load_mask_csv(args.mask, checkpoint.schema))
    run = impute_new if args.new_data else impute
    result = run(checkpoint, dataset)
    dataio.save_csv(args.out, checkpoint.schema, result.filled_raw)
    probs_path = str(args.out) + ".probs.json"
    probs: dict = {}
    for j, p in result.cat_probs.items():
        col = checkpoint.schema.columns[j]
        rows = np.flatnonzero(dataset.mask[:, j] == 0)
        probs[col.name] = {
            "categories": list(col.categories),
            "rows": [{"row": int(i), "probs": p[i].tolist()} for i in rows],
        }
    if probs:
        with open(probs_path, "w", encoding="utf-8") as fh:
            json.dump(probs, fh)
            fh.write("\n")
    print(
        json.dumps(
            {
                "imputed": str(args.out),
                "cells_filled": int((dataset.mask == 0).sum()),
                "probs_sidecar": probs_path if probs else None,
            }
        )
    )
    return 0


def cmd_eval(args) -> int:
    schema = dataio.load_schema(args.schema)
    truth = dataio.load_csv(args.truth, schema)
    if not (truth.mask == 1).all():
        raise DataError("truth table must be fully observed")
    imputed = dataio.load_csv(args.imputed, schema)
    if not (imputed.mask == 1).all():
        raise DataError("imputed table must be fully observed")
    mask = dataio.load_mask_csv(args.mask, schema)
    if mask.shape != truth.raw.shape or imputed.raw.shape != truth.raw.shape:
        raise DataError(
            f"shape mismatch: truth {truth.raw.shape}, imputed {imputed.raw.shape}, "
            f"mask {mask.shape}"
        )
    scaler = dataio.fit_minmax(truth)
    truth_scaled = scaler.transform(truth.raw)
    pred_scaled = scaler.transform(imputed.raw)
    kinds = [c.kind for c in schema.columns]
    overall, per_feature = metrics.mae_missing(pred_scaled, truth_scaled, mask, kinds)
    _, per_feature_raw = metrics.mae_missing(imputed.raw, truth.raw, mask, kinds)

    masked = dataio.apply_mask(truth, mask)
    masked = dataio.scale_dataset(masked, scaler)
    baseline = metrics.mean_impute(masked)
    base_overall, _ = metrics.mae_missing(baseline, truth_scaled, mask, kinds)

    report = metrics.EvalReport(
        mae_overall=overall,
        mae_per_feature=per_feature.tolist(),
        mae_unscaled_per_feature=per_feature_raw.tolist(),
        baseline_mae=base_overall,
        normalized_mae=metrics.normalized_mae(overall, base_overall),
        missing_cells=int((mask == 0).sum()),
    )
    if args.checkpoint:
        checkpoint = load_checkpoint(args.checkpoint)
        from .graph import build_graph
        from .model import forward

        ds = dataio.scale_dataset(dataio.apply_mask(truth, mask), checkpoint.scaler)
        graph = build_graph(ds, checkpoint.rho)
        result = forward(graph, checkpoint.params, training=False)
        report.eps = args.eps
        report.r_v_feat = metrics.embedding_space_size(result.h_feat.value, args.eps)
        report.r_v_obs = metrics.embedding_space_size(result.h_obs.value, args.eps)
    _write_json(report.to_json(), args.out)
    return 0


def cmd_predict(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = dataio.load_csv(args.data, checkpoint.schema)
    if args.mask:
        dataset = dataio.apply_mask(dataset, dataio.load_mask_csv(args.mask, checkpoint.schema))
    prediction = predict_labels(checkpoint, dataset)
    out: dict = {"predictions": prediction.raw.tolist()}
    if prediction.probs is not None:
        out["probs"] = prediction.probs.tolist()
    if dataset.y_raw is not None and dataset.y_mask is not None and dataset.y_mask.any():
        labelled = dataset.y_mask == 1
        truth = dataset.y_raw[labelled]
        if checkpoint.schema.label.kind == dataio.CATEGORICAL:
            out["label_accuracy"] = float((prediction.raw[labelled] == truth).mean())
        else:
            out["label_mae"] = float(np.abs(prediction.raw[labelled] - truth).mean())
        out["labelled_rows"] = int(labelled.sum())
    _write_json(out, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcgnn",
        description="Impute missing table cells and predict labels with a "
        "bipartite + feature-interdependence graph network.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log more (-v, -vv)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark table")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=500, help="rows")
    p.add_argument("--m", type=int, default=8, help="features")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--independent",
        action="store_true",
        help="independent columns instead of a shared latent factor",
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("genmask", help="draw a missingness mask for a table")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--mechanism", required=True, choices=missingness.MECHANISMS)
    p.add_argument("--rate", type=float, required=True, help="target missing rate in [0, 1]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="mask CSV path")
    p.add_argument(
        "--no-guard",
        action="store_true",
        help="skip the connectivity guard (rows/columns may end up fully missing)",
    )
    p.set_defaults(func=cmd_genmask)

    p = sub.add_parser("train", help="train on one incomplete table")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--mask", help="extra mask CSV hiding observed cells")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSONL training log path")
    p.add_argument("--profile", choices=("paper", "desk"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--agg", choices=("mean", "sum", "max"))
    p.add_argument("--estimator", choices=("spearman", "pearson", "kendall"))
    p.add_argument("--label-task", action="store_true", help="train the label head too")
    p.add_argument(
        "--ablate-interdependence",
        action="store_true",
        help="zero all feature-pair gates (no feature-to-feature messages)",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("impute", help="fill missing cells with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", help="extra mask CSV hiding observed cells")
    p.add_argument("--out", required=True, help="imputed CSV path")
    p.add_argument(
        "--new-data",
        action="store_true",
        help="rows the model never saw in training (inductive imputation)",
    )
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("eval", help="score an imputed table against the truth")
    p.add_argument("--truth", required=True, help="fully observed reference CSV")
    p.add_argument("--imputed", required=True)
    p.add_argument("--mask", required=True, help="which cells were hidden")
    p.add_argument("--schema", required=True)
    p.add_argument("--checkpoint", help="also report embedding-space sizes")
    p.add_argument("--eps", type=float, default=1.0, help="embedding-size distortion")
    p.add_argument("--out", help="write the report JSON here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict labels with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", help="extra mask CSV hiding observed cells")
    p.add_argument("--out", help="write predictions JSON here instead of stdout")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
