"""Binary classifiers: a from-scratch random forest and an analytic threshold model.

The forest uses CART-style greedy Gini splits: axis-aligned threshold splits
on numeric features, equality splits on categorical features (matching the
encoded integer codes). Trees are stored as flat arrays so a whole population
of candidates can be pushed through the forest with vectorized gathers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FeatureSchema, Instance

MODEL_FORMAT_VERSION = 1

_LEAF = 0
_NUM_SPLIT = 1
_CAT_SPLIT = 2


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 2
    max_features: str | int = "sqrt"  # per-node feature subsample

    def resolve_mtry(self, d: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(round(math.sqrt(d))))
        m = int(self.max_features)
        if not (1 <= m <= d):
            raise ValueError(f"max_features {m} out of range for d={d}")
        return m


class _Tree:
    """Flat node arrays: kind, feature, value (threshold or category code), children, leaf class."""

    __slots__ = ("kind", "feature", "value", "left", "right", "klass")

    def __init__(self) -> None:
        self.kind: list[int] = []
        self.feature: list[int] = []
        self.value: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.klass: list[int] = []

    def add_leaf(self, klass: int) -> int:
        return self._add(_LEAF, -1, 0.0, -1, -1, klass)

    def add_split(self, kind: int, feature: int, value: float) -> int:
        return self._add(kind, feature, value, -1, -1, -1)

    def _add(self, kind, feature, value, left, right, klass) -> int:
        self.kind.append(kind)
        self.feature.append(feature)
        self.value.append(value)
        self.left.append(left)
        self.right.append(right)
        self.klass.append(klass)
        return len(self.kind) - 1

    def freeze(self) -> None:
        self.kind = np.asarray(self.kind, dtype=np.int8)
        self.feature = np.asarray(self.feature, dtype=np.int32)
        self.value = np.asarray(self.value, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int32)
        self.right = np.asarray(self.right, dtype=np.int32)
        self.klass = np.asarray(self.klass, dtype=np.int8)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        cur = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            active = self.kind[cur] != _LEAF
            if not active.any():
                break
            idx = np.flatnonzero(active)
            nodes = cur[idx]
            vals = X[idx, self.feature[nodes]]
            numeric = self.kind[nodes] == _NUM_SPLIT
            go_left = np.where(numeric, vals <= self.value[nodes], vals == self.value[nodes])
            cur[idx] = np.where(go_left, self.left[nodes], self.right[nodes])
        return self.klass[cur].astype(np.int64)


def _gini_pair(c1_left, n_left, c1_right, n_right):
    # weighted impurity of a binary split given class-1 counts per side
    p1l = c1_left / n_left
    p1r = c1_right / n_right
    gl = 1.0 - p1l * p1l - (1.0 - p1l) * (1.0 - p1l)
    gr = 1.0 - p1r * p1r - (1.0 - p1r) * (1.0 - p1r)
    n = n_left + n_right
    return (n_left * gl + n_right * gr) / n


def _best_split(X, y, idx, features, min_leaf, numeric_mask):
    """Scan candidate features for the lowest weighted Gini; ties keep the first found."""
    best = None  # (score, kind, feature, value)
    for f in features:
        col = X[idx, f]
        if numeric_mask[f]:
            order = np.argsort(col, kind="stable")
            sv = col[order]
            sy = y[idx][order]
            n = len(sv)
            cum1 = np.cumsum(sy)
            total1 = cum1[-1]
            # split after position i: left = [0..i], candidates where the value changes
            pos = np.arange(min_leaf - 1, n - min_leaf)
            if len(pos) == 0:
                continue
            valid = sv[pos] < sv[pos + 1]
            pos = pos[valid]
            if len(pos) == 0:
                continue
            n_left = pos + 1
            c1_left = cum1[pos]
            score = _gini_pair(c1_left, n_left, total1 - c1_left, n - n_left)
            j = int(np.argmin(score))
            cand = (float(score[j]), _NUM_SPLIT, f, float((sv[pos[j]] + sv[pos[j] + 1]) / 2.0))
            if best is None or cand[0] < best[0]:
                best = cand
        else:
            codes = np.unique(col)
            if len(codes) < 2:
                continue
            n = len(col)
            total1 = int(y[idx].sum())
            for code in codes:
                mask = col == code
                n_left = int(mask.sum())
                if n_left < min_leaf or n - n_left < min_leaf:
                    continue
                c1_left = int(y[idx][mask].sum())
                s = _gini_pair(c1_left, n_left, total1 - c1_left, n - n_left)
                if best is None or s < best[0]:
                    best = (float(s), _CAT_SPLIT, f, float(code))
    return best


def _majority(y_sub) -> int:
    ones = int(y_sub.sum())
    zeros = len(y_sub) - ones
    return 1 if ones > zeros else 0  # tie -> class 0


def _grow(tree, X, y, idx, depth, params, mtry, numeric_mask, rng) -> int:
    y_sub = y[idx]
    if depth >= params.max_depth or len(idx) < 2 * params.min_leaf or y_sub.min() == y_sub.max():
        return tree.add_leaf(_majority(y_sub))
    d = X.shape[1]
    features = np.sort(rng.choice(d, size=mtry, replace=False))
    split = _best_split(X, y, idx, features, params.min_leaf, numeric_mask)
    if split is None:
        return tree.add_leaf(_majority(y_sub))
    _, kind, f, value = split
    col = X[idx, f]
    mask = col <= value if kind == _NUM_SPLIT else col == value
    node = tree.add_split(kind, f, value)
    left = _grow(tree, X, y, idx[mask], depth + 1, params, mtry, numeric_mask, rng)
    right = _grow(tree, X, y, idx[~mask], depth + 1, params, mtry, numeric_mask, rng)
    tree.left[node] = left
    tree.right[node] = right
    return node


class RandomForestModel:
    """Bootstrap ensemble of CART trees; majority vote with ties toward class 0."""

    kind = "random_forest"

    def __init__(self, schema: FeatureSchema, trees: list[_Tree], params: ForestParams,
                 seed: int, extra: dict | None = None):
        if not trees:
            raise ValueError("forest needs at least one tree")
        self.schema = schema
        self.trees = trees
        self.params = params
        self.seed = seed
        self.extra = dict(extra or {})

    def predict(self, x: Instance) -> int:
        self.schema.validate_instance(x)
        return int(self.predict_batch(x.values[None, :])[0])

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.schema.d:
            raise ValueError(f"expected (n, {self.schema.d}) matrix, got {X.shape}")
        votes = np.zeros(X.shape[0], dtype=np.int64)
        for t in self.trees:
            votes += t.predict_batch(X)
        return (2 * votes > len(self.trees)).astype(np.int64)

    def tree_votes(self, x: Instance) -> np.ndarray:
        """Per-tree class votes, exposed so majority voting stays checkable."""
        row = np.asarray(x.values, dtype=np.float64)[None, :]
        return np.array([int(t.predict_batch(row)[0]) for t in self.trees], dtype=np.int64)


@dataclass(frozen=True)
class ThresholdModel:
    """Analytic oracle: predicts 1 iff (value >= threshold) xor polarity."""

    feature: int
    threshold: float
    polarity: bool = False
    schema: FeatureSchema | None = None
    kind: str = field(default="threshold", init=False)
    seed: int = field(default=0, init=False)

    def predict(self, x: Instance) -> int:
        if self.schema is not None:
            self.schema.validate_instance(x)
        return int((x.values[self.feature] >= self.threshold) ^ self.polarity)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return ((X[:, self.feature] >= self.threshold) ^ self.polarity).astype(np.int64)


def train_random_forest(train: Dataset, params: ForestParams | None = None,
                        seed: int = 0) -> RandomForestModel:
    """Grow a bootstrap forest; deterministic for a fixed seed."""
    params = params or ForestParams()
    y = train.y
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class; nothing to learn")
    X = train.X
    n, d = X.shape
    mtry = params.resolve_mtry(d)
    numeric_mask = train.schema.numeric_mask
    streams = np.random.SeedSequence(seed).spawn(params.n_trees)
    trees = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, size=n)
        tree = _Tree()
        _grow(tree, X, y, boot, 0, params, mtry, numeric_mask, rng)
        tree.freeze()
        trees.append(tree)
    return RandomForestModel(train.schema, trees, params, seed)


def negatives(model, test: Dataset) -> list[Instance]:
    """Test rows predicted with the unfavorable class (0), original order kept."""
    return [test.row(i) for i in negative_indices(model, test)]


def negative_indices(model, test: Dataset) -> list[int]:
    preds = model.predict_batch(test.X)
    return [int(i) for i in np.flatnonzero(preds == 0)]


# -- persistence ---------------------------------------------------------------

def _tree_to_nested(tree: _Tree, node: int = 0) -> dict:
    kind = int(tree.kind[node])
    if kind == _LEAF:
        return {"leaf": int(tree.klass[node])}
    out = {
        "split": "numeric" if kind == _NUM_SPLIT else "category",
        "feature": int(tree.feature[node]),
        "value": float(tree.value[node]),
        "left": _tree_to_nested(tree, int(tree.left[node])),
        "right": _tree_to_nested(tree, int(tree.right[node])),
    }
    return out


def _tree_from_nested(obj: dict) -> _Tree:
    tree = _Tree()

    def build(o: dict) -> int:
        if "leaf" in o:
            return tree.add_leaf(int(o["leaf"]))
        kind = _NUM_SPLIT if o["split"] == "numeric" else _CAT_SPLIT
        node = tree.add_split(kind, int(o["feature"]), float(o["value"]))
        left = build(o["left"])
        right = build(o["right"])
        tree.left[node] = left
        tree.right[node] = right
        return node

    build(obj)
    tree.freeze()
    return tree


def save_model(model, path) -> None:
    if not path:
        raise ModelFormatError("empty model path")
    payload: dict = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "seed": model.seed,
    }
    if isinstance(model, RandomForestModel):
        payload["schema"] = model.schema.to_dict()
        payload["params"] = {
            "n_trees": model.params.n_trees,
            "max_depth": model.params.max_depth,
            "min_leaf": model.params.min_leaf,
            "max_features": model.params.max_features,
        }
        payload["extra"] = model.extra
        payload["trees"] = [_tree_to_nested(t) for t in model.trees]
    elif isinstance(model, ThresholdModel):
        payload["feature"] = model.feature
        payload["threshold"] = model.threshold
        payload["polarity"] = model.polarity
        if model.schema is not None:
            payload["schema"] = model.schema.to_dict()
    else:
        raise ModelFormatError(f"cannot serialize model kind {type(model).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path):
    if not path:
        raise ModelFormatError("empty model path")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from None
    if not isinstance(payload, dict):
        raise ModelFormatError(f"corrupt model file {path}: not an object")
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version!r}")
    kind = payload.get("kind")
    try:
        if kind == "random_forest":
            schema = FeatureSchema.from_dict(payload["schema"])
            p = payload["params"]
            params = ForestParams(int(p["n_trees"]), int(p["max_depth"]),
                                  int(p["min_leaf"]), p["max_features"])
            trees = [_tree_from_nested(t) for t in payload["trees"]]
            return RandomForestModel(schema, trees, params, int(payload["seed"]),
                                     extra=payload.get("extra") or {})
        if kind == "threshold":
            schema = FeatureSchema.from_dict(payload["schema"]) if "schema" in payload else None
            return ThresholdModel(int(payload["feature"]), float(payload["threshold"]),
                                  bool(payload["polarity"]), schema)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from None
    raise ModelFormatError(f"unknown model kind {kind!r}")
