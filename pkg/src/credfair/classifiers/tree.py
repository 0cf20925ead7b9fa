"""Histogram CART used by the forest and boosting models.

Columns are quantised once per fit (``Binner``); the split search then works on
small integer bins, which keeps an RF/GB hyperparameter search on the German
Credit data well under a minute.  Split thresholds are stored in raw feature
units so prediction never needs the binner.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GINI, MSE = 0, 1
MAX_BINS = 255
_EPS = 1e-12


class Binner:
    """Per-column thresholds: midpoints of distinct values, or quantiles past MAX_BINS."""

    def __init__(self, max_bins: int = MAX_BINS):
        self.max_bins = max_bins
        self.thresholds: list[np.ndarray] = []

    def fit(self, X: np.ndarray) -> "Binner":
        self.thresholds = []
        for j in range(X.shape[1]):
            values = np.unique(X[:, j])
            if len(values) > self.max_bins:
                qs = np.quantile(X[:, j], np.linspace(0, 1, self.max_bins + 1)[1:-1])
                values = np.unique(np.concatenate([qs, values[[0, -1]]]))
            self.thresholds.append((values[:-1] + values[1:]) / 2.0)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.int32)
        for j, thr in enumerate(self.thresholds):
            # bin b holds values in (thr[b-1], thr[b]]
            out[:, j] = np.searchsorted(thr, X[:, j], side="left")
        return out

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(t) + 1 for t in self.thresholds], dtype=np.int64)


@njit(cache=True)
def _impurity(criterion, w, wy, wyy):
    if w <= 0.0:
        return 0.0
    if criterion == GINI:
        p = wy / w
        return 2.0 * p * (1.0 - p)
    mean = wy / w
    v = wyy / w - mean * mean
    return v if v > 0.0 else 0.0


@njit(cache=True)
def _best_split(Xb, y, w, idx, features, n_bins, criterion, min_samples_leaf):
    """Scan candidate features in the given (ascending) order; strict improvement keeps the earliest tie."""
    n = idx.shape[0]
    tot_w = 0.0
    tot_wy = 0.0
    tot_wyy = 0.0
    for i in range(n):
        r = idx[i]
        tot_w += w[r]
        tot_wy += w[r] * y[r]
        tot_wyy += w[r] * y[r] * y[r]
    parent = _impurity(criterion, tot_w, tot_wy, tot_wyy)
    best_gain = 0.0
    best_f = -1
    best_b = -1
    for fi in range(features.shape[0]):
        f = features[fi]
        nb = n_bins[f]
        if nb < 2:
            continue
        hw = np.zeros(nb)
        hy = np.zeros(nb)
        hyy = np.zeros(nb)
        hc = np.zeros(nb, dtype=np.int64)
        for i in range(n):
            r = idx[i]
            b = Xb[r, f]
            hw[b] += w[r]
            hy[b] += w[r] * y[r]
            hyy[b] += w[r] * y[r] * y[r]
            hc[b] += 1
        lw = 0.0
        ly = 0.0
        lyy = 0.0
        lc = 0
        for b in range(nb - 1):
            lw += hw[b]
            ly += hy[b]
            lyy += hyy[b]
            lc += hc[b]
            if hc[b] == 0:
                continue
            rc = n - lc
            if lc < min_samples_leaf or rc < min_samples_leaf:
                continue
            rw = tot_w - lw
            if lw <= 0.0 or rw <= 0.0:
                continue
            child = (lw * _impurity(criterion, lw, ly, lyy)
                     + rw * _impurity(criterion, rw, tot_wy - ly, tot_wyy - lyy)) / tot_w
            gain = parent - child
            if gain > best_gain + _EPS:
                best_gain = gain
                best_f = f
                best_b = b
    return best_f, best_b, best_gain * tot_w, tot_w, tot_wy


@njit(cache=True)
def _build(Xb, y, w, rows, n_bins, allowed, max_features, criterion,
           max_depth, min_samples_split, min_samples_leaf, seed):
    np.random.seed(seed)
    cap = 2 * rows.shape[0] + 1
    feature = np.full(cap, -1, dtype=np.int64)
    bin_ = np.full(cap, -1, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    decrease = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)
    # explicit stack of (node id, rows) in depth-first order
    stack_nodes = [0]
    stack_rows = [rows]
    n_nodes = 1
    while len(stack_nodes) > 0:
        node = stack_nodes.pop()
        idx = stack_rows.pop()
        tw = 0.0
        twy = 0.0
        for i in range(idx.shape[0]):
            tw += w[idx[i]]
            twy += w[idx[i]] * y[idx[i]]
        value[node] = twy / tw if tw > 0 else 0.0
        if idx.shape[0] < min_samples_split or (max_depth >= 0 and depth[node] >= max_depth):
            continue
        if max_features < allowed.shape[0]:
            feats = np.sort(allowed[np.random.permutation(allowed.shape[0])[:max_features]])
        else:
            feats = allowed
        f, b, gain, _, _ = _best_split(Xb, y, w, idx, feats, n_bins, criterion, min_samples_leaf)
        if f < 0:
            continue
        go_left = np.empty(idx.shape[0], dtype=np.bool_)
        for i in range(idx.shape[0]):
            go_left[i] = Xb[idx[i], f] <= b
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        feature[node] = f
        bin_[node] = b
        left[node] = li
        right[node] = ri
        decrease[node] = gain
        depth[li] = depth[node] + 1
        depth[ri] = depth[node] + 1
        stack_nodes.append(ri)
        stack_rows.append(idx[~go_left])
        stack_nodes.append(li)
        stack_rows.append(idx[go_left])
    return (feature[:n_nodes], bin_[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], decrease[:n_nodes])


@njit(cache=True)
def _apply(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while left[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


class Tree:
    """A fitted binary tree; ``value`` is P(y=1) (gini) or the leaf mean (mse)."""

    def __init__(self, feature, threshold, left, right, value, decrease):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.decrease = np.asarray(decrease, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _apply(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                      self.left, self.right, self.value)

    def importances(self, n_features: int) -> np.ndarray:
        """Total impurity decrease per column, unnormalised."""
        out = np.zeros(n_features)
        split = self.feature >= 0
        np.add.at(out, self.feature[split], self.decrease[split])
        return out

    def to_state(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("feature", "threshold", "left", "right", "value", "decrease")}

    @classmethod
    def from_state(cls, state: dict) -> "Tree":
        return cls(**state)


def grow_tree(Xb, y, binner, *, weights=None, rows=None, allowed=None, max_features=None,
              criterion=GINI, max_depth=None, min_samples_split=2, min_samples_leaf=1, seed=0) -> Tree:
    n, d = Xb.shape
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    rows = np.arange(n, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    allowed = np.arange(d, dtype=np.int64) if allowed is None else np.sort(np.asarray(allowed, dtype=np.int64))
    k = len(allowed) if max_features is None else max(1, min(int(max_features), len(allowed)))
    feature, bin_, left, right, value, decrease = _build(
        Xb, y, w, rows, binner.n_bins, allowed, k, criterion,
        -1 if max_depth is None else int(max_depth), int(min_samples_split), int(min_samples_leaf),
        int(seed) % (2**32))
    threshold = np.zeros(len(feature))
    for node in np.flatnonzero(feature >= 0):
        threshold[node] = binner.thresholds[feature[node]][bin_[node]]
    return Tree(feature, threshold, left, right, value, decrease)
