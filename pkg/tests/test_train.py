"""Training loop: config validation, loss assembly, the dropped-edge
isolation property, determinism, checkpoint round-trips, and the
imputation / label-prediction entry points."""

import json
import logging
import math

import numpy as np
import pytest

from bcgnn.dataio import CATEGORICAL, CONTINUOUS, Column, Dataset, Schema, scale_dataset
from bcgnn.errors import ConfigError, DataError
from bcgnn.graph import build_graph, sample_drop_masks
from bcgnn.model import Hyper, forward, init_params
from bcgnn.train import (
    Checkpoint,
    TrainConfig,
    fit,
    imputation_loss,
    impute,
    impute_new,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
)


def small_config(**kw):
    base = dict(
        profile="desk",
        epochs=30,
        d_n=8,
        d_e=8,
        d_m=8,
        layers=2,
        seed=0,
        log_interval=10,
    )
    base.update(kw)
    return TrainConfig(**base)


def small_dataset(n=24, seed=0, with_label=False, miss=0.25):
    rng = np.random.Generator(np.random.PCG64(seed))
    schema = Schema(
        columns=(
            Column(name="a", kind=CONTINUOUS),
            Column(name="b", kind=CONTINUOUS),
            Column(name="c", kind=CATEGORICAL, categories=("u", "v", "w")),
        ),
        label=Column(name="y", kind=CONTINUOUS) if with_label else None,
    )
    base = rng.random(n)
    raw = np.column_stack(
        [
            base + 0.05 * rng.standard_normal(n),
            1.0 - base + 0.05 * rng.standard_normal(n),
            np.clip((base * 3).astype(int), 0, 2).astype(float),
        ]
    )
    mask = (rng.random((n, 3)) > miss).astype(np.uint8)
    mask[0] = 1
    mask[:, 0] = np.maximum(mask[:, 0], (mask.sum(axis=1) == 0).astype(np.uint8))
    raw = np.where(mask == 1, raw, np.nan)
    return Dataset(
        schema=schema,
        raw=raw,
        mask=mask,
        y_raw=2.0 * base - 0.5 if with_label else None,
        y_mask=np.ones(n, dtype=np.uint8) if with_label else None,
    )


class TestTrainConfig:
    def test_profiles_resolve_epochs(self):
        assert TrainConfig(profile="desk").resolved_epochs() == 2000
        assert TrainConfig(profile="paper").resolved_epochs() == 20000
        assert TrainConfig(profile="paper", epochs=7).resolved_epochs() == 7

    @pytest.mark.parametrize(
        "kw",
        [
            {"profile": "galactic"},
            {"epochs": 0},
            {"lr": 0.0},
            {"r_b": 1.5},
            {"r_c": -0.1},
            {"a_drop": 2.0},
            {"agg": "median"},
            {"estimator": "cosine"},
            {"label_weight": -1.0},
            {"log_interval": 0},
            {"d_m": 32},  # must equal d_n
        ],
    )
    def test_invalid_knobs_rejected(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()

    def test_json_round_trip(self):
        cfg = small_config(agg="max", estimator="kendall", label_task=True)
        again = TrainConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_unknown_json_key_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_json({"profile": "desk", "momentum": 0.9})


def training_setup(seed=0):
    """A scaled dataset, graph, params, and one epoch's drop masks."""
    ds = scale_dataset(small_dataset(seed=seed))
    from bcgnn.correlation import pairwise_corr

    rho = pairwise_corr(ds.scaled, ds.mask).rho
    g = build_graph(ds, rho)
    hyper = Hyper(d_n=8, d_e=8, d_m=8, layers=2)
    params = init_params(
        np.random.Generator(np.random.PCG64(3)), hyper, 3, g.d_e0, g.cat_sizes
    )
    masks = sample_drop_masks(
        g, 2, 8, 0.5, 0.5, 0.3, np.random.Generator(np.random.PCG64(4))
    )
    return ds, g, params, masks


class TestLossIsolation:
    def run_epoch(self, g, params, masks):
        result = forward(g, params, masks=masks, training=True)
        loss, n_held = imputation_loss(result, g, masks.held_edges)
        return result, float(loss.value[0, 0]), n_held

    def test_dropped_edge_feature_cannot_reach_loss(self):
        _, g, params, masks = training_setup()
        _, base_loss, n_held = self.run_epoch(g, params, masks)
        assert n_held > 0
        held = np.flatnonzero(masks.held_edges)
        e = held[0]
        base_pred = forward(g, params, masks=masks, training=True).feat_pred[
            g.edge_feat[e]
        ].value[g.edge_obs[e]]
        g.edge_init[e] += 0.7  # poison the dropped edge's stored feature
        result, loss, _ = self.run_epoch(g, params, masks)
        assert loss == base_loss  # bitwise: the value never entered the pass
        np.testing.assert_array_equal(
            result.feat_pred[g.edge_feat[e]].value[g.edge_obs[e]], base_pred
        )

    def test_kept_edge_feature_does_reach_loss(self):
        _, g, params, masks = training_setup()
        _, base_loss, _ = self.run_epoch(g, params, masks)
        kept = np.flatnonzero(masks.keep_edges)
        g.edge_init[kept[0]] += 0.7
        _, loss, _ = self.run_epoch(g, params, masks)
        assert loss != base_loss

    def test_target_value_never_reaches_predictions(self):
        _, g, params, masks = training_setup()
        base = forward(g, params, masks=masks, training=True)
        held = np.flatnonzero(masks.held_edges)
        cont = held[np.isin(g.edge_feat[held], [0, 1])]
        g.edge_value[cont[0]] += 0.31  # loss target, not a network input
        again = forward(g, params, masks=masks, training=True)
        for j in base.feat_pred:
            np.testing.assert_array_equal(
                again.feat_pred[j].value, base.feat_pred[j].value
            )


class TestImputationLoss:
    def test_matches_hand_composition(self):
        _, g, params, masks = training_setup(seed=5)
        result = forward(g, params, masks=masks, training=True)
        loss, n_held = imputation_loss(result, g, masks.held_edges)
        held = np.flatnonzero(masks.held_edges)
        terms = []
        for e in held:
            i, j = g.edge_obs[e], g.edge_feat[e]
            pred = result.feat_pred[j].value[i]
            if g.cat_sizes[j] == 0:
                terms.append((pred[0] - g.edge_value[e]) ** 2)
            else:
                z = pred - pred.max()
                log_probs = z - math.log(np.exp(z).sum())
                terms.append(-log_probs[int(g.edge_value[e])])
        assert n_held == len(terms)
        assert float(loss.value[0, 0]) == pytest.approx(np.mean(terms), abs=1e-12)

    def test_no_held_edges_gives_none(self):
        _, g, params, masks = training_setup()
        masks.held_edges[:] = False
        result = forward(g, params, masks=masks, training=True)
        loss, n_held = imputation_loss(result, g, masks.held_edges)
        assert loss is None and n_held == 0


class TestFit:
    def test_loss_decreases(self):
        history = []
        fit(small_dataset(), small_config(epochs=200), history=history)
        assert history[0]["epoch"] == 1
        assert history[-1]["epoch"] == 200
        assert history[-1]["imputation_loss"] < history[0]["imputation_loss"]
        assert all(math.isfinite(rec["imputation_loss"]) for rec in history)

    def test_bitwise_determinism(self):
        h1, h2 = [], []
        ck1 = fit(small_dataset(), small_config(), history=h1)
        ck2 = fit(small_dataset(), small_config(), history=h2)
        assert [r["imputation_loss"] for r in h1] == [r["imputation_loss"] for r in h2]
        for (n1, a1), (n2, a2) in zip(ck1.params.arrays(), ck2.params.arrays()):
            assert n1 == n2
            np.testing.assert_array_equal(a1, a2)

    def test_log_file_records_run(self, tmp_path):
        log = tmp_path / "fit.jsonl"
        fit(small_dataset(), small_config(epochs=25), log_path=log)
        lines = [json.loads(l) for l in log.read_text().splitlines()]
        assert lines[0]["event"] == "start"
        assert "graph" in lines[0] and "kernel_backend" in lines[0]
        epochs = [rec["epoch"] for rec in lines[1:]]
        assert epochs == [1, 10, 20, 25]

    def test_never_dropping_edges_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="bcgnn.train"):
            fit(small_dataset(), small_config(epochs=3, r_b=0.0))
        assert any("no held-out edges" in rec.message for rec in caplog.records)

    def test_label_task_requires_labels(self):
        with pytest.raises(ConfigError):
            fit(small_dataset(with_label=False), small_config(label_task=True))

    def test_feature_count_must_fit_one_hot_width(self):
        with pytest.raises(ConfigError):
            fit(small_dataset(), small_config(d_n=2, d_e=2, d_m=2))

    def test_disconnected_table_rejected(self):
        ds = small_dataset()
        ds.mask[:, 1] = 0
        ds.raw[:, 1] = np.nan
        with pytest.raises(DataError):
            fit(ds, small_config())


class TestCheckpointRoundTrip:
    def trained(self, **kw):
        return fit(small_dataset(with_label=True), small_config(**kw))

    def test_save_load_forward_bitwise(self, tmp_path):
        ck = self.trained()
        before = impute(ck, small_dataset(with_label=True))
        path = tmp_path / "model.ckpt"
        save_checkpoint(ck, path)
        loaded = load_checkpoint(path)
        after = impute(loaded, small_dataset(with_label=True))
        np.testing.assert_array_equal(after.predicted_scaled, before.predicted_scaled)
        np.testing.assert_array_equal(after.predicted_raw, before.predicted_raw)
        assert loaded.config == ck.config
        np.testing.assert_array_equal(loaded.rho, ck.rho)

    def test_label_scaler_survives_round_trip(self, tmp_path):
        ck = self.trained(label_task=True, epochs=5)
        path = tmp_path / "model.ckpt"
        save_checkpoint(ck, path)
        loaded = load_checkpoint(path)
        assert loaded.label_scaler == ck.label_scaler
        before = predict_labels(ck, small_dataset(with_label=True))
        after = predict_labels(loaded, small_dataset(with_label=True))
        np.testing.assert_array_equal(after.raw, before.raw)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(self.trained(epochs=2), path)
        payload = json.loads(path.read_text())
        payload["magic"] = "something-else"
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(self.trained(epochs=2), path)
        payload = json.loads(path.read_text())
        payload["version"] = 999
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(self.trained(epochs=2), path)
        path.write_text(path.read_text()[: len(path.read_text()) // 2])
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_tampered_array_shape_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(self.trained(epochs=2), path)
        payload = json.loads(path.read_text())
        name = next(iter(payload["model"]["arrays"]))
        payload["model"]["arrays"][name]["shape"] = [1, 1]
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError):
            load_checkpoint(path)


class TestImputeEntryPoints:
    def test_filled_raw_passes_observed_through(self):
        ds = small_dataset()
        ck = fit(ds, small_config(epochs=10))
        out = impute(ck, ds)
        obs = ds.mask == 1
        np.testing.assert_array_equal(out.filled_raw[obs], ds.raw[obs])
        assert np.isfinite(out.filled_raw).all()
        assert out.predicted_scaled.shape == ds.raw.shape
        assert list(out.cat_probs) == [2]

    def test_impute_new_is_frozen_impute(self):
        train_ds = small_dataset(seed=0)
        new_ds = small_dataset(seed=42)
        ck = fit(train_ds, small_config(epochs=10))
        a = impute_new(ck, new_ds)
        b = impute(ck, new_ds)
        np.testing.assert_array_equal(a.predicted_scaled, b.predicted_scaled)

    def test_schema_mismatch_rejected(self):
        ck = fit(small_dataset(), small_config(epochs=2))
        other = Dataset(
            schema=Schema(columns=(Column(name="z", kind=CONTINUOUS),)),
            raw=np.array([[0.5], [0.7]]),
            mask=np.ones((2, 1), dtype=np.uint8),
        )
        with pytest.raises(DataError):
            impute(ck, other)

    def test_label_prediction_requires_head(self):
        ck = fit(small_dataset(), small_config(epochs=2))
        with pytest.raises(ConfigError):
            predict_labels(ck, small_dataset())


class TestLabelPipeline:
    def test_joint_training_learns_linear_label(self):
        ds = small_dataset(n=40, with_label=True)
        history = []
        ck = fit(ds, small_config(epochs=150, label_task=True), history=history)
        assert all(
            math.isfinite(rec["label_loss"]) for rec in history if rec["label_loss"] is not None
        )
        assert history[-1]["label_loss"] < history[0]["label_loss"]
        pred = predict_labels(ck, ds)
        assert pred.scaled.shape == (40,)
        assert np.isfinite(pred.raw).all()
        # raw predictions come back in label units via the stored bounds
        lo, hi = ck.label_scaler
        np.testing.assert_allclose(pred.raw, pred.scaled * (hi - lo) + lo, atol=1e-12)
