"""KD-tree k-NN over the normalized numeric projection of opposite-class rows.

Results are ordered by (distance, insertion id) so queries are exactly
reproducible and comparable against a brute-force scan, ties included.
"""
from __future__ import annotations

import heapq

import numpy as np

from .data import Dataset, FeatureSchema, Instance, normalize_matrix


class _Node:
    __slots__ = ("point", "axis", "left", "right")

    def __init__(self, point: int, axis: int, left, right):
        self.point = point
        self.axis = axis
        self.left = left
        self.right = right


class KdIndex:
    """Nearest-neighbor index over points (m, q); payload rows are the original instances."""

    def __init__(self, schema: FeatureSchema, points: np.ndarray, payload: np.ndarray):
        if len(points) != len(payload):
            raise ValueError("points/payload length mismatch")
        if len(points) == 0:
            raise ValueError("cannot build an index over zero points")
        self.schema = schema
        self.points = np.asarray(points, dtype=np.float64)
        self.payload = np.asarray(payload, dtype=np.float64)
        self._root = None
        if self.points.shape[1] > 0:
            self._root = self._build(np.arange(len(points)), 0)

    def __len__(self) -> int:
        return len(self.points)

    def _build(self, ids: np.ndarray, depth: int):
        if len(ids) == 0:
            return None
        axis = depth % self.points.shape[1]
        order = ids[np.argsort(self.points[ids, axis], kind="stable")]
        mid = len(order) // 2
        return _Node(
            int(order[mid]),
            axis,
            self._build(order[:mid], depth + 1),
            self._build(order[mid + 1:], depth + 1),
        )

    def query(self, q: np.ndarray, k: int) -> list[tuple[float, int]]:
        """Return min(k, n) pairs (euclidean distance, id), sorted by (distance, id)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(k, len(self.points))
        if self.points.shape[1] == 0:
            # no numeric features: every point is at distance 0; order by id
            return [(0.0, i) for i in range(k)]
        q = np.asarray(q, dtype=np.float64)
        heap: list[tuple[float, int]] = []  # max-heap via negated (d2, id)

        def visit(node):
            if node is None:
                return
            p = self.points[node.point]
            d2 = float(((p - q) ** 2).sum())
            key = (-d2, -node.point)
            if len(heap) < k:
                heapq.heappush(heap, key)
            elif key > heap[0]:
                heapq.heapreplace(heap, key)
            gap = q[node.axis] - p[node.axis]
            near, far = (node.left, node.right) if gap <= 0 else (node.right, node.left)
            visit(near)
            # the far side can still hold a point at equal distance with a smaller id
            if len(heap) < k or gap * gap <= -heap[0][0]:
                visit(far)

        visit(self._root)
        out = sorted((-d2, -i) for d2, i in heap)
        return [(float(np.sqrt(d2)), int(i)) for d2, i in out]

    def row(self, i: int) -> Instance:
        return Instance(self.payload[i])


def numeric_projection(schema: FeatureSchema, X: np.ndarray) -> np.ndarray:
    """Normalize rows and keep only the numeric columns."""
    return normalize_matrix(np.atleast_2d(X), schema)[:, schema.numeric_mask]


def build_kd_index(train: Dataset, model, target_class: int) -> KdIndex:
    """Index the training rows the model assigns to target_class."""
    preds = model.predict_batch(train.X)
    keep = np.flatnonzero(preds == target_class)
    if len(keep) == 0:
        raise ValueError(f"no training instances predicted as class {target_class}")
    rows = train.X[keep]
    return KdIndex(train.schema, numeric_projection(train.schema, rows), rows)
