"""k-nearest neighbours with an exhaustive scan and a kd-tree that must agree with it.

Neighbours are ordered by (distance, training index), so ties on one-hot data
resolve identically in both search paths.
"""

from __future__ import annotations

import heapq

import numpy as np

from .base import TrainingError


def minkowski_powered(points, q, p):
    """Sum of |x - q|^p per row (the root is monotone and never needed for ranking)."""
    diff = np.abs(points - q)
    return np.sum(diff if p == 1 else diff ** p, axis=-1)


def brute_neighbors(X, q, k, p):
    dist = minkowski_powered(X, q, p)
    order = np.lexsort((np.arange(len(X)), dist))[:k]
    return order, dist[order]


class KDTree:
    def __init__(self, X, leaf_size=30):
        self.X = np.asarray(X, dtype=np.float64)
        self.leaf_size = max(1, int(leaf_size))
        # node arrays: bounding box, children, index span into self.perm
        self.lo, self.hi, self.children, self.spans = [], [], [], []
        self.perm = np.arange(len(self.X))
        self._build(0, len(self.X))

    def _build(self, start, stop):
        node = len(self.lo)
        pts = self.X[self.perm[start:stop]]
        self.lo.append(pts.min(axis=0))
        self.hi.append(pts.max(axis=0))
        self.children.append(None)
        self.spans.append((start, stop))
        spread = self.hi[node] - self.lo[node]
        if stop - start <= self.leaf_size or not np.any(spread > 0):
            return node
        dim = int(np.argmax(spread))
        idx = self.perm[start:stop]
        idx = idx[np.lexsort((idx, self.X[idx, dim]))]
        self.perm[start:stop] = idx
        mid = start + (stop - start) // 2
        left = self._build(start, mid)
        right = self._build(mid, stop)
        self.children[node] = (left, right)
        return node

    def _box_bound(self, node, q, p):
        gap = np.maximum(0.0, np.maximum(self.lo[node] - q, q - self.hi[node]))
        return minkowski_powered(gap, 0.0, p)

    def query(self, q, k, p):
        q = np.asarray(q, dtype=np.float64)
        k = min(k, len(self.X))
        heap: list[tuple[float, int]] = []  # max-heap on (dist, index) via negation

        def worst():
            return (-heap[0][0], -heap[0][1])

        def visit(node):
            # slack guards against summation-order ulps; only ever visits more
            if len(heap) == k and self._box_bound(node, q, p) > worst()[0] * (1 + 1e-12):
                return
            children = self.children[node]
            if children is None:
                start, stop = self.spans[node]
                idx = self.perm[start:stop]
                dist = minkowski_powered(self.X[idx], q, p)
                for d, i in zip(dist.tolist(), idx.tolist()):
                    if len(heap) < k:
                        heapq.heappush(heap, (-d, -i))
                    elif (d, i) < worst():
                        heapq.heapreplace(heap, (-d, -i))
                return
            a, b = children
            if self._box_bound(b, q, p) < self._box_bound(a, q, p):
                a, b = b, a
            visit(a)
            visit(b)

        visit(0)
        found = sorted((-d, -i) for d, i in heap)
        return np.array([i for _, i in found], dtype=np.int64), np.array([d for d, _ in found])


class KNN:
    def __init__(self, n_neighbors=5, weights="uniform", algorithm="brute", leaf_size=30, p=2):
        if weights not in ("uniform", "distance"):
            raise TrainingError(f"unknown weights {weights!r}")
        if algorithm not in ("brute", "kd-tree"):
            raise TrainingError(f"unknown algorithm {algorithm!r}")
        if p < 1:
            raise TrainingError("Minkowski p must be >= 1")
        self.n_neighbors, self.weights, self.algorithm = int(n_neighbors), weights, algorithm
        self.leaf_size, self.p = int(leaf_size), float(p)
        self.X = self.y = None
        self._tree = None

    def fit(self, X, y, seed=0):
        self.X = np.asarray(X, dtype=np.float64).copy()
        self.y = np.asarray(y, dtype=np.float64).copy()
        if self.algorithm == "kd-tree":
            self._tree = KDTree(self.X, self.leaf_size)
        return self

    def neighbors(self, q):
        k = min(self.n_neighbors, len(self.X))
        if self._tree is not None:
            return self._tree.query(q, k, self.p)
        return brute_neighbors(self.X, q, k, self.p)

    def _score(self, idx, powered):
        labels = self.y[idx]
        if self.weights == "uniform":
            return float(labels.mean())
        exact = powered == 0
        if exact.any():
            return float(labels[exact].mean())
        w = 1.0 / powered ** (1.0 / self.p)
        return float(np.sum(w * labels) / np.sum(w))

    def predict_proba(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.array([self._score(*self.neighbors(q)) for q in X])

    def to_state(self):
        return {"X": self.X.tolist(), "y": self.y.tolist()}

    def load_state(self, state):
        return self.fit(np.asarray(state["X"]), np.asarray(state["y"]))
