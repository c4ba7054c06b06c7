"""Tabular data with explicit missingness: schema, CSV parsing, scaling.

Conventions used throughout the package:

* ``raw`` matrices are float64 with one column per feature; categorical
  cells hold the category index as a float. Missing cells are NaN.
* ``mask`` matrices are uint8, 1 = observed. Every consumer treats masked
  cells as absent; they are stored as NaN so accidental reads poison the
  result instead of silently leaking information.
* ``scaled`` matrices map observed continuous cells to [0, 1] by min-max
  over the observed entries; categorical cells keep their index.

CSV files are UTF-8 with a header row naming the columns. An empty cell
means missing. Parsing is strict: no whitespace trimming, category values
must match the schema exactly, continuous cells must parse as finite
floats. A mask CSV carries the same header and 0/1 cells.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(self.categories) < 2:
                raise DataError(f"column {self.name!r}: categorical needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise DataError(f"column {self.name!r}: duplicate categories")
        elif self.categories:
            raise DataError(f"column {self.name!r}: continuous column lists categories")


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    label: Column | None = None

    def __post_init__(self):
        if not self.columns:
            raise DataError("schema has no columns")
        names = [c.name for c in self.columns]
        if self.label is not None:
            names.append(self.label.name)
        if len(set(names)) != len(names):
            raise DataError("schema has duplicate column names")

    @property
    def n_features(self) -> int:
        return len(self.columns)

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def category_counts(self) -> list[int]:
        """Per feature: number of categories, or 0 for continuous."""
        return [len(c.categories) for c in self.columns]

    def to_json(self) -> dict:
        def col(c: Column) -> dict:
            out = {"name": c.name, "kind": c.kind}
            if c.kind == CATEGORICAL:
                out["categories"] = list(c.categories)
            return out

        data: dict = {"columns": [col(c) for c in self.columns]}
        if self.label is not None:
            data["label"] = col(self.label)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "Schema":
        if not isinstance(data, dict) or "columns" not in data:
            raise DataError("schema JSON must be an object with a 'columns' list")

        def col(entry: dict) -> Column:
            if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
                raise DataError(f"schema column entry malformed: {entry!r}")
            unknown = set(entry) - {"name", "kind", "categories"}
            if unknown:
                raise DataError(f"schema column {entry.get('name')!r}: unknown keys {sorted(unknown)}")
            return Column(
                name=str(entry["name"]),
                kind=str(entry["kind"]),
                categories=tuple(str(c) for c in entry.get("categories", ())),
            )

        unknown = set(data) - {"columns", "label"}
        if unknown:
            raise DataError(f"schema JSON: unknown keys {sorted(unknown)}")
        label = col(data["label"]) if data.get("label") is not None else None
        return cls(columns=tuple(col(c) for c in data["columns"]), label=label)


def load_schema(path) -> Schema:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read schema {path}: {exc}") from exc
    return Schema.from_json(data)


def save_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")


@dataclass
class ScalerStats:
    """Per-feature min/max over observed entries; NaN rows for categorical."""

    mins: np.ndarray
    maxs: np.ndarray
    kinds: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "mins": [None if math.isnan(v) else v for v in self.mins.tolist()],
            "maxs": [None if math.isnan(v) else v for v in self.maxs.tolist()],
            "kinds": list(self.kinds),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ScalerStats":
        try:
            mins = np.array([np.nan if v is None else float(v) for v in data["mins"]])
            maxs = np.array([np.nan if v is None else float(v) for v in data["maxs"]])
            kinds = tuple(str(k) for k in data["kinds"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed scaler stats: {exc}") from exc
        return cls(mins=mins, maxs=maxs, kinds=kinds)

    def transform(self, raw: np.ndarray) -> np.ndarray:
        """Map raw to the model's scale; NaN (missing) propagates."""
        out = np.array(raw, dtype=np.float64, copy=True)
        for j, kind in enumerate(self.kinds):
            if kind != CONTINUOUS:
                continue
            span = self.maxs[j] - self.mins[j]
            if span > 0:
                out[:, j] = (out[:, j] - self.mins[j]) / span
            else:
                out[:, j] = np.where(np.isnan(out[:, j]), np.nan, 0.0)
        return out

    def inverse_transform(self, scaled: np.ndarray) -> np.ndarray:
        out = np.array(scaled, dtype=np.float64, copy=True)
        for j, kind in enumerate(self.kinds):
            if kind != CONTINUOUS:
                continue
            span = self.maxs[j] - self.mins[j]
            out[:, j] = out[:, j] * span + self.mins[j] if span > 0 else np.where(
                np.isnan(out[:, j]), np.nan, self.mins[j]
            )
        return out


@dataclass
class Dataset:
    """A table, its missingness mask, and (optionally) labels."""

    schema: Schema
    raw: np.ndarray
    mask: np.ndarray
    y_raw: np.ndarray | None = None
    y_mask: np.ndarray | None = None
    y_train_mask: np.ndarray | None = None
    scaled: np.ndarray | None = None
    scaler: ScalerStats | None = field(default=None, repr=False)

    @property
    def n_rows(self) -> int:
        return self.raw.shape[0]

    @property
    def n_features(self) -> int:
        return self.raw.shape[1]


def _parse_cell(cell: str, column: Column, row_num: int):
    """Parse one CSV cell; returns (value, observed)."""
    if cell == "":
        return np.nan, 0
    if cell != cell.strip():
        raise DataError(
            f"column {column.name!r}, data row {row_num}: "
            f"value {cell!r} has surrounding whitespace"
        )
    if column.kind == CONTINUOUS:
        try:
            value = float(cell)
        except ValueError as exc:
            raise DataError(
                f"column {column.name!r}, data row {row_num}: {cell!r} is not a number"
            ) from exc
        if not math.isfinite(value):
            raise DataError(
                f"column {column.name!r}, data row {row_num}: non-finite value {cell!r}"
            )
        return value, 1
    try:
        return float(column.categories.index(cell)), 1
    except ValueError as exc:
        raise DataError(
            f"column {column.name!r}, data row {row_num}: {cell!r} is not one of "
            f"the declared categories {list(column.categories)}"
        ) from exc


def load_csv(path, schema: Schema) -> Dataset:
    """Load a data CSV against a schema. Strict; see the module docstring."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file (missing header)")
    header, data_rows = rows[0], rows[1:]
    expected = schema.feature_names
    with_label = False
    if header == expected:
        pass
    elif schema.label is not None and header == expected + [schema.label.name]:
        with_label = True
    else:
        raise DataError(
            f"{path}: header {header} does not match schema columns {expected}"
            + (f" (optionally + [{schema.label.name!r}])" if schema.label else "")
        )
    if not data_rows:
        raise DataError(f"{path}: no data rows")

    n, m = len(data_rows), schema.n_features
    raw = np.full((n, m), np.nan)
    mask = np.zeros((n, m), dtype=np.uint8)
    y_raw = np.full(n, np.nan) if with_label else None
    y_mask = np.zeros(n, dtype=np.uint8) if with_label else None

    width = m + (1 if with_label else 0)
    for i, row in enumerate(data_rows):
        row_num = i + 1
        if len(row) != width:
            raise DataError(f"{path}: data row {row_num} has {len(row)} cells, expected {width}")
        for j, col in enumerate(schema.columns):
            raw[i, j], mask[i, j] = _parse_cell(row[j], col, row_num)
        if with_label:
            y_raw[i], y_mask[i] = _parse_cell(row[m], schema.label, row_num)
    return Dataset(schema=schema, raw=raw, mask=mask, y_raw=y_raw, y_mask=y_mask)


def format_value(value: float, column: Column) -> str:
    """Render a cell back to CSV text (category index -> category name).

    NaN marks a missing cell and renders as the empty string.
    """
    if math.isnan(value):
        return ""
    if column.kind == CATEGORICAL:
        idx = int(round(value))
        if not 0 <= idx < len(column.categories):
            raise DataError(f"column {column.name!r}: category index {value} out of range")
        return column.categories[idx]
    return repr(float(value))


def save_csv(path, schema: Schema, values: np.ndarray, y_values: np.ndarray | None = None) -> None:
    """Write a fully observed table (values in original units)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = schema.feature_names
        if y_values is not None:
            header = header + [schema.label.name]
        writer.writerow(header)
        for i in range(values.shape[0]):
            row = [format_value(values[i, j], c) for j, c in enumerate(schema.columns)]
            if y_values is not None:
                row.append(format_value(y_values[i], schema.label))
            writer.writerow(row)


def fit_minmax(dataset: Dataset) -> ScalerStats:
    """Min/max per continuous feature over observed entries only."""
    m = dataset.n_features
    mins = np.full(m, np.nan)
    maxs = np.full(m, np.nan)
    for j, col in enumerate(dataset.schema.columns):
        observed = dataset.raw[dataset.mask[:, j] == 1, j]
        if observed.size == 0:
            raise DataError(f"column {col.name!r} has no observed entries; cannot fit scaler")
        if col.kind == CONTINUOUS:
            mins[j] = observed.min()
            maxs[j] = observed.max()
    return ScalerStats(mins=mins, maxs=maxs, kinds=tuple(c.kind for c in dataset.schema.columns))


def scale_dataset(dataset: Dataset, scaler: ScalerStats | None = None) -> Dataset:
    """Return a copy with ``scaled`` filled (fitting min-max stats if not given)."""
    stats = scaler if scaler is not None else fit_minmax(dataset)
    if tuple(stats.kinds) != tuple(c.kind for c in dataset.schema.columns):
        raise DataError("scaler stats do not match the schema's column kinds")
    return replace(dataset, scaled=stats.transform(dataset.raw), scaler=stats)


def split_labels(present_mask: np.ndarray, ratio: float = 0.7, seed: int = 0) -> np.ndarray:
    """Mark a train subset of the present labels: exactly min(ceil(ratio*k), k-1) ones.

    The remainder of the present labels is the evaluation portion. Requires
    at least two present labels.
    """
    present = np.asarray(present_mask).astype(bool)
    candidates = np.flatnonzero(present)
    k = candidates.size
    if k < 2:
        raise DataError(f"label split needs >= 2 labelled rows, found {k}")
    n_train = min(math.ceil(ratio * k), k - 1)
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.permutation(candidates)[:n_train]
    out = np.zeros(present.shape[0], dtype=np.uint8)
    out[chosen] = 1
    return out


def apply_mask(dataset: Dataset, extra_mask: np.ndarray) -> Dataset:
    """Hide additional cells: mask becomes AND, hidden values become NaN."""
    extra = np.asarray(extra_mask, dtype=np.uint8)
    if extra.shape != dataset.mask.shape:
        raise DataError(
            f"mask shape {extra.shape} does not match data shape {dataset.mask.shape}"
        )
    if not np.isin(extra, (0, 1)).all():
        raise DataError("mask entries must be 0 or 1")
    new_mask = (dataset.mask & extra).astype(np.uint8)
    raw = dataset.raw.copy()
    raw[new_mask == 0] = np.nan
    return replace(dataset, raw=raw, mask=new_mask, scaled=None, scaler=None)


def save_mask_csv(path, mask: np.ndarray, feature_names) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(feature_names))
        for row in np.asarray(mask, dtype=np.uint8):
            writer.writerow([str(int(v)) for v in row])


def load_mask_csv(path, schema: Schema) -> np.ndarray:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read mask file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty mask file")
    if rows[0] != schema.feature_names:
        raise DataError(f"{path}: mask header {rows[0]} does not match schema {schema.feature_names}")
    if len(rows) == 1:
        raise DataError(f"{path}: mask has no data rows")
    out = np.zeros((len(rows) - 1, schema.n_features), dtype=np.uint8)
    for i, row in enumerate(rows[1:]):
        if len(row) != schema.n_features:
            raise DataError(f"{path}: mask row {i + 1} has {len(row)} cells")
        for j, cell in enumerate(row):
            if cell not in ("0", "1"):
                raise DataError(f"{path}: mask row {i + 1}, column {schema.feature_names[j]!r}: "
                                f"{cell!r} is not 0/1")
            out[i, j] = int(cell)
    return out
