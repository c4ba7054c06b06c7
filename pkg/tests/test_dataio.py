"""Schema/CSV handling, min-max scaling, masks, and the labelled-row split."""

import math

import numpy as np
import pytest

from bcgnn.dataio import (
    CATEGORICAL,
    CONTINUOUS,
    Column,
    Dataset,
    Schema,
    apply_mask,
    fit_minmax,
    load_csv,
    load_mask_csv,
    load_schema,
    save_csv,
    save_mask_csv,
    save_schema,
    scale_dataset,
    split_labels,
)
from bcgnn.errors import DataError


def demo_schema(with_label=False):
    cols = (
        Column(name="age", kind=CONTINUOUS),
        Column(name="color", kind=CATEGORICAL, categories=("red", "green", "blue")),
    )
    label = Column(name="target", kind=CONTINUOUS) if with_label else None
    return Schema(columns=cols, label=label)


def demo_dataset(raw, mask=None, schema=None):
    raw = np.asarray(raw, dtype=np.float64)
    if mask is None:
        mask = (~np.isnan(raw)).astype(np.uint8)
    return Dataset(schema=schema or demo_schema(), raw=raw, mask=np.asarray(mask, dtype=np.uint8))


class TestScaler:
    def test_minmax_round_trip(self):
        """Value 3 with observed min 2 / max 4 maps to 0.5 and back."""
        ds = demo_dataset([[2.0, 0], [3.0, 1], [4.0, 2]])
        st = fit_minmax(ds)
        scaled = st.transform(ds.raw)
        assert scaled[1, 0] == 0.5
        back = st.inverse_transform(scaled)
        np.testing.assert_allclose(back[:, 0], [2.0, 3.0, 4.0], rtol=1e-12)

    def test_categorical_passes_through_untouched(self):
        ds = demo_dataset([[2.0, 0], [4.0, 2]])
        scaled = fit_minmax(ds).transform(ds.raw)
        np.testing.assert_array_equal(scaled[:, 1], [0, 2])

    def test_constant_column_maps_to_zero(self):
        ds = demo_dataset([[7.0, 0], [7.0, 1]])
        st = fit_minmax(ds)
        scaled = st.transform(ds.raw)
        assert (scaled[:, 0] == 0.0).all()
        back = st.inverse_transform(scaled)
        assert (back[:, 0] == 7.0).all()

    def test_missing_cells_propagate_nan(self):
        ds = demo_dataset([[2.0, 0], [np.nan, 1], [4.0, 2]])
        scaled = fit_minmax(ds).transform(ds.raw)
        assert np.isnan(scaled[1, 0])

    def test_stats_fit_only_on_observed(self):
        raw = np.array([[0.0, 0], [100.0, 1], [50.0, 2]])
        mask = np.array([[1, 1], [0, 1], [1, 1]], dtype=np.uint8)
        ds = demo_dataset(raw, mask)
        ds = Dataset(schema=ds.schema, raw=np.where(mask == 1, raw, np.nan), mask=mask)
        st = fit_minmax(ds)
        assert st.mins[0] == 0.0 and st.maxs[0] == 50.0

    def test_scaler_json_round_trip(self):
        ds = demo_dataset([[2.0, 0], [4.0, 1]])
        st = fit_minmax(ds)
        from bcgnn.dataio import ScalerStats

        st2 = ScalerStats.from_json(st.to_json())
        assert st2.kinds == st.kinds
        np.testing.assert_array_equal(
            np.nan_to_num(st2.mins, nan=-1), np.nan_to_num(st.mins, nan=-1)
        )


class TestCsvRoundTrip:
    def test_save_load_preserves_values_and_gaps(self, tmp_path):
        schema = demo_schema()
        raw = np.array([[1.5, 0.0], [np.nan, 2.0], [3.25, np.nan]])
        path = tmp_path / "data.csv"
        save_csv(path, schema, raw)
        ds = load_csv(path, schema)
        np.testing.assert_array_equal(ds.mask, [[1, 1], [0, 1], [1, 0]])
        assert ds.raw[0, 0] == 1.5 and ds.raw[1, 1] == 2.0
        assert np.isnan(ds.raw[1, 0]) and np.isnan(ds.raw[2, 1])

    def test_labels_round_trip(self, tmp_path):
        schema = demo_schema(with_label=True)
        raw = np.array([[1.0, 0.0], [2.0, 1.0]])
        y = np.array([0.25, np.nan])
        path = tmp_path / "data.csv"
        save_csv(path, schema, raw, y_values=y)
        ds = load_csv(path, schema)
        assert ds.y_raw[0] == 0.25 and np.isnan(ds.y_raw[1])
        np.testing.assert_array_equal(ds.y_mask, [1, 0])

    def test_unknown_category_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("age,color\n1.0,purple\n")
        with pytest.raises(DataError, match="purple"):
            load_csv(path, demo_schema())

    def test_nonfinite_value_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("age,color\ninf,red\n")
        with pytest.raises(DataError):
            load_csv(path, demo_schema())

    def test_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("age,colour\n1.0,red\n")
        with pytest.raises(DataError):
            load_csv(path, demo_schema())

    def test_surrounding_whitespace_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("age,color\n 1.0,red\n")
        with pytest.raises(DataError):
            load_csv(path, demo_schema())

    def test_schema_json_round_trip(self, tmp_path):
        schema = demo_schema(with_label=True)
        path = tmp_path / "schema.json"
        save_schema(schema, path)
        loaded = load_schema(path)
        assert loaded == schema


class TestMasks:
    def test_apply_mask_poisons_hidden_cells(self):
        ds = demo_dataset([[1.0, 0], [2.0, 1]])
        extra = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        masked = apply_mask(ds, extra)
        np.testing.assert_array_equal(masked.mask, [[1, 0], [0, 1]])
        assert masked.raw[0, 0] == 1.0
        assert np.isnan(masked.raw[0, 1]) and np.isnan(masked.raw[1, 0])
        # scaling is stale after masking, so it must be dropped
        assert masked.scaled is None

    def test_apply_mask_is_an_and(self):
        raw = np.array([[1.0, 0.0]])
        ds = Dataset(
            schema=demo_schema(),
            raw=np.array([[np.nan, 0.0]]),
            mask=np.array([[0, 1]], dtype=np.uint8),
        )
        masked = apply_mask(ds, np.ones((1, 2), dtype=np.uint8))
        np.testing.assert_array_equal(masked.mask, [[0, 1]])

    def test_mask_csv_round_trip(self, tmp_path):
        schema = demo_schema()
        mask = np.array([[1, 0], [0, 1], [1, 1]], dtype=np.uint8)
        path = tmp_path / "mask.csv"
        save_mask_csv(path, mask, [c.name for c in schema.columns])
        loaded = load_mask_csv(path, schema)
        np.testing.assert_array_equal(loaded, mask)

    def test_mask_csv_rejects_non_binary(self, tmp_path):
        path = tmp_path / "mask.csv"
        path.write_text("age,color\n1,2\n")
        with pytest.raises(DataError):
            load_mask_csv(path, demo_schema())


class TestLabelSplit:
    def test_exact_train_count(self):
        present = np.ones(10, dtype=np.uint8)
        tr = split_labels(present, ratio=0.7, seed=0)
        assert tr.sum() == 7

    def test_ceil_and_cap(self):
        # ceil(0.7 * 9) = 7; cap at k-1 keeps at least one eval row
        assert split_labels(np.ones(9, dtype=np.uint8), 0.7, 0).sum() == 7
        assert split_labels(np.ones(2, dtype=np.uint8), 0.9, 0).sum() == 1
        assert split_labels(np.ones(3, dtype=np.uint8), 1.0, 0).sum() == 2

    def test_only_present_rows_are_chosen(self):
        present = np.array([1, 0, 1, 0, 1, 1], dtype=np.uint8)
        tr = split_labels(present, 0.7, seed=3)
        assert tr.sum() == math.ceil(0.7 * 4)
        assert not (tr & (1 - present)).any()

    def test_deterministic_per_seed(self):
        present = np.ones(20, dtype=np.uint8)
        a = split_labels(present, 0.7, seed=5)
        b = split_labels(present, 0.7, seed=5)
        c = split_labels(present, 0.7, seed=6)
        assert (a == b).all()
        assert (a != c).any()

    def test_too_few_labels_rejected(self):
        with pytest.raises(DataError):
            split_labels(np.array([1, 0, 0], dtype=np.uint8))
