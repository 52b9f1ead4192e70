"""Tabular data core: schemas, encoded instances, CSV loading, weights, normalization.

Categorical values are interned to integer codes at load time so the rest of
the package can work on plain float64 arrays. Decoding back to the original
strings happens only at presentation boundaries (CLI output, HTTP payloads).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class DatasetError(ValueError):
    """Base class for schema/data ingestion problems."""


class SchemaFormatError(DatasetError):
    pass


class MissingColumnError(DatasetError):
    pass


class ValueParseError(DatasetError):
    pass


class UnknownCategoryError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    """One column: a name, a kind, and its value domain.

    bounds is the observed numeric domain [lo, hi] used for min-max
    normalization; categories is the interned value set for categorical
    features. Either may be None on a schema read from a sidecar file that
    leaves the domain to be inferred from data.
    """

    name: str
    kind: str
    bounds: tuple[float, float] | None = None
    categories: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaFormatError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == NUMERIC and self.categories is not None:
            raise SchemaFormatError(f"feature {self.name!r}: numeric feature with categories")
        if self.kind == CATEGORICAL and self.bounds is not None:
            raise SchemaFormatError(f"feature {self.name!r}: categorical feature with bounds")
        if self.bounds is not None:
            lo, hi = self.bounds
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise SchemaFormatError(f"feature {self.name!r}: invalid bounds {self.bounds}")
        if self.categories is not None and len(self.categories) == 0:
            raise SchemaFormatError(f"feature {self.name!r}: empty category set")

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC


class FeatureSchema:
    """Ordered feature specs plus the label column name."""

    def __init__(self, features: tuple[FeatureSpec, ...] | list[FeatureSpec], label: str):
        self.features: tuple[FeatureSpec, ...] = tuple(features)
        self.label = label
        if not self.features:
            raise SchemaFormatError("schema has no features")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaFormatError("duplicate feature names in schema")
        if label in names:
            raise SchemaFormatError(f"label column {label!r} collides with a feature name")
        self._index = {f.name: i for i, f in enumerate(self.features)}
        self.numeric_mask = np.array([f.is_numeric for f in self.features], dtype=bool)
        # normalization bounds per feature; categorical slots get (0, 1) and are ignored
        lo = np.zeros(len(self.features))
        hi = np.ones(len(self.features))
        for i, f in enumerate(self.features):
            if f.is_numeric and f.bounds is not None:
                lo[i], hi[i] = f.bounds
        self._lo = lo
        self._hi = hi

    @property
    def d(self) -> int:
        return len(self.features)

    def feature_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise MissingColumnError(f"unknown feature {name!r}") from None

    def feature(self, i: int) -> FeatureSpec:
        return self.features[i]

    # -- encode/decode between raw python values and float codes ------------

    def encode_value(self, i: int, raw, *, row: int | None = None):
        spec = self.features[i]
        where = f" (row {row}, column {spec.name!r})" if row is not None else f" (column {spec.name!r})"
        if spec.is_numeric:
            try:
                v = float(raw)
            except (TypeError, ValueError):
                raise ValueParseError(f"unparseable numeric value {raw!r}{where}") from None
            if not math.isfinite(v):
                raise ValueParseError(f"non-finite numeric value {raw!r}{where}")
            return v
        cats = spec.categories
        if cats is None:
            raise SchemaFormatError(f"feature {spec.name!r} has no interned categories yet")
        try:
            return float(cats.index(str(raw)))
        except ValueError:
            raise UnknownCategoryError(f"unknown category {raw!r}{where}") from None

    def decode_value(self, i: int, code: float):
        spec = self.features[i]
        if spec.is_numeric:
            return float(code)
        return spec.categories[int(round(code))]

    def instance_from_raw(self, raw_values) -> "Instance":
        if len(raw_values) != self.d:
            raise DatasetError(f"expected {self.d} values, got {len(raw_values)}")
        return Instance(np.array([self.encode_value(i, v) for i, v in enumerate(raw_values)]))

    def instance_to_raw(self, x: "Instance") -> list:
        return [self.decode_value(i, v) for i, v in enumerate(x.values)]

    def validate_instance(self, x: "Instance") -> None:
        """Raise DatasetError unless x is a d-vector with finite numerics and in-range codes."""
        if x.values.shape != (self.d,):
            raise DatasetError(f"instance has shape {x.values.shape}, schema expects ({self.d},)")
        for i, spec in enumerate(self.features):
            v = x.values[i]
            if spec.is_numeric:
                if not math.isfinite(v):
                    raise DatasetError(f"non-finite value in numeric feature {spec.name!r}")
            else:
                code = int(round(v))
                if code != v or not (0 <= code < len(spec.categories or ())):
                    raise DatasetError(f"invalid category code {v!r} for feature {spec.name!r}")

    # -- sidecar file ---------------------------------------------------------

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            entry: dict = {"name": f.name, "kind": f.kind}
            if f.bounds is not None:
                entry["bounds"] = list(f.bounds)
            if f.categories is not None:
                entry["categories"] = list(f.categories)
            feats.append(entry)
        return {"label": self.label, "features": feats}

    @classmethod
    def from_dict(cls, obj: dict) -> "FeatureSchema":
        if not isinstance(obj, dict) or "features" not in obj or "label" not in obj:
            raise SchemaFormatError("schema file must define 'label' and 'features'")
        feats = []
        for entry in obj["features"]:
            if "name" not in entry or "kind" not in entry:
                raise SchemaFormatError(f"feature entry missing name/kind: {entry!r}")
            bounds = tuple(entry["bounds"]) if entry.get("bounds") is not None else None
            cats = tuple(entry["categories"]) if entry.get("categories") is not None else None
            feats.append(FeatureSpec(entry["name"], entry["kind"], bounds=bounds, categories=cats))
        return cls(tuple(feats), str(obj["label"]))


def load_schema(path) -> FeatureSchema:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaFormatError(f"cannot read schema file {path}: {exc}") from None
    return FeatureSchema.from_dict(obj)


@dataclass(frozen=True, eq=False)
class Instance:
    """One encoded row: numerics verbatim, categoricals as integer codes."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __eq__(self, other) -> bool:
        return isinstance(other, Instance) and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"Instance({self.values.tolist()})"


class Dataset:
    """Immutable encoded table: schema, (n, d) value matrix, binary labels."""

    def __init__(self, schema: FeatureSchema, X: np.ndarray, y: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != schema.d:
            raise DatasetError(f"X has shape {X.shape}, schema expects (n, {schema.d})")
        if y.shape != (X.shape[0],):
            raise DatasetError("labels length does not match row count")
        if len(y) and not np.isin(y, (0, 1)).all():
            raise DatasetError("labels must be binary {0,1}")
        X.setflags(write=False)
        y.setflags(write=False)
        self.schema = schema
        self.X = X
        self.y = y

    def __len__(self) -> int:
        return self.X.shape[0]

    def row(self, i: int) -> Instance:
        return Instance(self.X[i])

    def rows(self):
        for i in range(len(self)):
            yield self.row(i)


def load_dataset(csv_path, schema_path) -> Dataset:
    """Read a CSV against its sidecar schema.

    Missing domain information in the sidecar (numeric bounds, category sets)
    is inferred from the data: bounds become the observed min/max, category
    sets the sorted observed values. Declared domains are enforced instead.
    """
    schema = load_schema(schema_path)
    try:
        fh = open(csv_path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset file {csv_path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{csv_path}: file has no header row") from None
        header = [h.strip() for h in header]
        col_of = {name: i for i, name in enumerate(header)}
        for f in schema.features:
            if f.name not in col_of:
                raise MissingColumnError(f"CSV is missing feature column {f.name!r}")
        if schema.label not in col_of:
            raise MissingColumnError(f"CSV is missing label column {schema.label!r}")
        raw_rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not raw_rows:
        raise EmptyDatasetError(f"{csv_path}: no data rows")

    # first pass for inferred category sets (sorted for stable codes)
    observed: dict[int, set] = {}
    for i, f in enumerate(schema.features):
        if f.kind == CATEGORICAL and f.categories is None:
            ci = col_of[f.name]
            observed[i] = {row[ci].strip() for row in raw_rows}
    if observed:
        feats = list(schema.features)
        for i, vals in observed.items():
            feats[i] = FeatureSpec(feats[i].name, CATEGORICAL, categories=tuple(sorted(vals)))
        schema = FeatureSchema(tuple(feats), schema.label)

    n, d = len(raw_rows), schema.d
    X = np.empty((n, d))
    y = np.empty(n, dtype=np.int64)
    li = col_of[schema.label]
    for r, row in enumerate(raw_rows):
        if len(row) != len(header):
            raise ValueParseError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        for i, f in enumerate(schema.features):
            X[r, i] = schema.encode_value(i, row[col_of[f.name]].strip(), row=r)
        lab = row[li].strip()
        if lab not in ("0", "1"):
            raise ValueParseError(f"row {r}: label {lab!r} is not 0/1 (column {schema.label!r})")
        y[r] = int(lab)

    # fill inferred numeric bounds from the observed domain
    feats = list(schema.features)
    changed = False
    for i, f in enumerate(feats):
        if f.is_numeric and f.bounds is None:
            feats[i] = FeatureSpec(f.name, NUMERIC, bounds=(float(X[:, i].min()), float(X[:, i].max())))
            changed = True
    if changed:
        schema = FeatureSchema(tuple(feats), schema.label)
    return Dataset(schema, X, y)


def save_dataset(ds: Dataset, csv_path, schema_path=None) -> None:
    """Write rows back to CSV (and optionally the resolved schema sidecar)."""
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in ds.schema.features] + [ds.schema.label])
        for i in range(len(ds)):
            raw = ds.schema.instance_to_raw(ds.row(i))
            writer.writerow([_csv_cell(v) for v in raw] + [int(ds.y[i])])
    if schema_path is not None:
        with open(schema_path, "w", encoding="utf-8") as fh:
            json.dump(ds.schema.to_dict(), fh, indent=2)
            fh.write("\n")


def _csv_cell(v):
    if isinstance(v, float) and v == int(v) and abs(v) < 1e15:
        return int(v)
    return v


def train_test_split(ds: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic row partition; training side gets round(ratio * n) rows."""
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(ds)
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    n_train = int(math.floor(ratio * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return (
        Dataset(ds.schema, ds.X[train_idx], ds.y[train_idx]),
        Dataset(ds.schema, ds.X[test_idx], ds.y[test_idx]),
    )


@dataclass(frozen=True)
class FeatureWeights:
    """Per-feature proximity weights; non-negative with at least one positive."""

    w: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.w, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "w", arr)
        if arr.ndim != 1 or not np.isfinite(arr).all() or (arr < 0).any() or not (arr > 0).any():
            raise ValueError("weights must be finite, non-negative, with at least one positive entry")


def compute_weights(ds: Dataset) -> FeatureWeights:
    """Inverse-MAD weights on raw columns, falling back to inverse std, then 1.

    Categorical features always weigh 1.
    """
    if len(ds) == 0:
        raise DatasetError("cannot compute weights on an empty dataset")
    w = np.ones(ds.schema.d)
    for i, f in enumerate(ds.schema.features):
        if not f.is_numeric:
            continue
        col = ds.X[:, i]
        mad = float(np.median(np.abs(col - np.median(col))))
        if mad > 0:
            w[i] = 1.0 / mad
        else:
            std = float(col.std())
            w[i] = 1.0 / std if std > 0 else 1.0
    return FeatureWeights(w)


def normalize(x: Instance, schema: FeatureSchema) -> Instance:
    """Min-max map numerics onto [0,1] (clamping outside the bounds); categoricals pass through."""
    return Instance(normalize_matrix(x.values[None, :], schema)[0])


def normalize_matrix(X: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    out = np.array(X, dtype=np.float64)
    span = schema._hi - schema._lo
    span_safe = np.where(span > 0, span, 1.0)
    m = schema.numeric_mask
    out[:, m] = np.clip((out[:, m] - schema._lo[m]) / span_safe[m], 0.0, 1.0)
    return out


def feature_diffs(schema: FeatureSchema, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-feature distance between already-normalized value vectors.

    Numeric: |a - b|. Categorical: overlap metric, 0 if equal else 1.
    Accepts (d,) vectors or (n, d) matrices (broadcasting one side).
    """
    m = schema.numeric_mask
    diff = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    if diff.ndim == 1:
        diff[~m] = (diff[~m] != 0).astype(np.float64)
    else:
        diff[:, ~m] = (diff[:, ~m] != 0).astype(np.float64)
    return diff


def make_blobs(n: int, d: int, seed: int, separation: float = 1.6) -> Dataset:
    """Two isotropic Gaussian blobs labelled 0/1; class-1 mean at separation on every axis."""
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    n1 = n // 2
    n0 = n - n1
    X = np.vstack([rng.normal(0.0, 1.0, (n0, d)), rng.normal(separation, 1.0, (n1, d))])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n)
    X, y = X[order], y[order]
    feats = tuple(
        FeatureSpec(f"f{i}", NUMERIC, bounds=(float(X[:, i].min()), float(X[:, i].max())))
        for i in range(d)
    )
    return Dataset(FeatureSchema(feats, "outcome"), X, y)
