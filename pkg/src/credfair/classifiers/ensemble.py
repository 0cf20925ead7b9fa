from __future__ import annotations

import zlib

import numpy as np

from .base import TrainingError, derive_seed, log_loss, sigmoid
from .tree import GINI, MSE, Binner, Tree, grow_tree


def _normalized(v):
    s = v.sum()
    return v / s if s > 0 else v


class RandomForest:
    """Bagged Gini trees with sqrt(d) candidate columns per node; score = fraction of trees voting 1."""

    def __init__(self, n_estimators=100, max_depth=None, min_samples_split=2, min_samples_leaf=1, bootstrap=True):
        if n_estimators < 1:
            raise TrainingError("n-estimators must be >= 1")
        self.n_estimators = int(n_estimators)
        self.max_depth = None if max_depth is None else int(max_depth)
        self.min_samples_split = max(2, int(min_samples_split))
        self.min_samples_leaf = max(1, int(min_samples_leaf))
        self.bootstrap = bool(bootstrap)
        self.trees: list[Tree] = []
        self.n_features = 0

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        n, d = X.shape
        binner = Binner().fit(X)
        Xb = binner.transform(X)
        max_features = max(1, int(np.sqrt(d)))
        self.n_features = d
        self.trees = []
        for t in range(self.n_estimators):
            tree_seed = derive_seed(seed, t)
            rng = np.random.default_rng(tree_seed)
            rows = rng.integers(0, n, n) if self.bootstrap else None
            self.trees.append(grow_tree(
                Xb, y, binner, rows=rows, max_features=max_features, criterion=GINI,
                max_depth=self.max_depth, min_samples_split=self.min_samples_split,
                min_samples_leaf=self.min_samples_leaf, seed=tree_seed))
        return self

    def votes(self, X):
        return np.stack([(tree.predict(X) >= 0.5).astype(np.float64) for tree in self.trees])

    def predict_proba(self, X):
        return self.votes(X).mean(axis=0)

    def column_importances(self):
        return np.mean([_normalized(t.importances(self.n_features)) for t in self.trees], axis=0)

    def to_state(self):
        return {"n_features": self.n_features, "trees": [t.to_state() for t in self.trees]}

    def load_state(self, state):
        self.n_features = int(state["n_features"])
        self.trees = [Tree.from_state(t) for t in state["trees"]]
        return self


class GradientBoosting:
    """First-order boosting of regression trees on the logistic-loss residual ``y - p``."""

    def __init__(self, n_estimators=100, l_rate=0.1, max_depth=3, colsample_bytree=1.0):
        if not 0 < colsample_bytree <= 1:
            raise TrainingError("colsample-bytree must be in (0, 1]")
        self.n_estimators, self.l_rate = int(n_estimators), float(l_rate)
        self.max_depth, self.colsample_bytree = int(max_depth), float(colsample_bytree)
        self.base_score = 0.0
        self.trees: list[Tree] = []
        self.loss_curve: list[float] = []
        self.n_features = 0

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, d = X.shape
        self.n_features = d
        binner = Binner().fit(X)
        Xb = binner.transform(X)
        prior = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        self.base_score = float(np.log(prior / (1 - prior)))
        F = np.full(n, self.base_score)
        self.loss_curve = [log_loss(sigmoid(F), y)]
        n_cols = max(1, int(round(self.colsample_bytree * d)))
        rng = np.random.default_rng(seed)
        self.trees = []
        for m in range(self.n_estimators):
            residual = y - sigmoid(F)
            cols = np.sort(rng.choice(d, n_cols, replace=False)) if n_cols < d else None
            tree = grow_tree(Xb, residual, binner, allowed=cols, criterion=MSE,
                             max_depth=self.max_depth, seed=derive_seed(seed, m))
            self.trees.append(tree)
            F += self.l_rate * tree.predict(X)
            self.loss_curve.append(log_loss(sigmoid(F), y))
        return self

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        F = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            F += self.l_rate * tree.predict(X)
        return F

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))

    def column_importances(self):
        return np.mean([_normalized(t.importances(self.n_features)) for t in self.trees], axis=0)

    def to_state(self):
        return {"base_score": self.base_score, "l_rate": self.l_rate, "n_features": self.n_features,
                "trees": [t.to_state() for t in self.trees], "loss_curve": self.loss_curve}

    def load_state(self, state):
        self.base_score = float(state["base_score"])
        self.l_rate = float(state["l_rate"])
        self.n_features = int(state["n_features"])
        self.trees = [Tree.from_state(t) for t in state["trees"]]
        self.loss_curve = list(state["loss_curve"])
        return self


def best_stump(Xb, n_bins, y_pm, w):
    """Minimum weighted-error stump over all (column, bin, polarity).

    Polarity +1 predicts +1 for ``bin <= b``; ties resolve to the lowest column,
    then the lowest bin, then polarity +1.
    """
    n, d = Xb.shape
    width = int(n_bins.max())
    offsets = np.arange(d) * width
    flat = (Xb + offsets).ravel()
    pos = np.bincount(flat, weights=np.repeat(w * (y_pm > 0), d), minlength=d * width).reshape(d, width)
    neg = np.bincount(flat, weights=np.repeat(w * (y_pm < 0), d), minlength=d * width).reshape(d, width)
    cpos, cneg = np.cumsum(pos, axis=1), np.cumsum(neg, axis=1)
    err_plus = cneg + (pos.sum(axis=1, keepdims=True) - cpos)
    err_minus = cpos + (neg.sum(axis=1, keepdims=True) - cneg)
    errors = np.stack([err_plus, err_minus], axis=-1)[:, :-1, :]
    valid = np.arange(width - 1)[None, :] < (n_bins[:, None] - 1)
    errors = np.where(valid[..., None], errors, np.inf)
    lowest = errors.min()
    f, b, s = np.unravel_index(np.flatnonzero(errors.ravel() <= lowest + 1e-12)[0], errors.shape)
    return int(f), int(b), 1 if s == 0 else -1


class AdaBoost:
    """Discrete AdaBoost over decision stumps, alpha = lr * 0.5 * ln((1 - eps) / eps)."""

    EPS_FLOOR = 1e-10

    def __init__(self, n_estimators=50, learning_rate=1.0):
        if n_estimators < 1 or learning_rate <= 0:
            raise TrainingError("n-estimators >= 1 and learning-rate > 0 required")
        self.n_estimators, self.learning_rate = int(n_estimators), float(learning_rate)
        self.stumps: list[tuple[int, float, int]] = []  # (column, threshold, polarity)
        self.alphas: list[float] = []
        self.errors: list[float] = []
        self.weight_history: list[np.ndarray] = []
        self.n_features = 0

    @staticmethod
    def stump_predict(X, column, threshold, polarity):
        return np.where(X[:, column] <= threshold, polarity, -polarity).astype(np.float64)

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        n, d = X.shape
        self.n_features = d
        y_pm = np.where(np.asarray(y) > 0, 1.0, -1.0)
        binner = Binner().fit(X)
        Xb = binner.transform(X)
        n_bins = binner.n_bins
        w = np.full(n, 1.0 / n)
        self.stumps, self.alphas, self.errors, self.weight_history = [], [], [], []
        for _ in range(self.n_estimators):
            if np.all(n_bins < 2):
                break
            f, b, polarity = best_stump(Xb, n_bins, y_pm, w)
            threshold = float(binner.thresholds[f][b])
            h = self.stump_predict(X, f, threshold, polarity)
            eps = float(w[h != y_pm].sum())
            if eps >= 0.5:
                break
            perfect = eps < self.EPS_FLOOR
            eps_c = max(eps, self.EPS_FLOOR)
            alpha = self.learning_rate * 0.5 * np.log((1.0 - eps_c) / eps_c)
            self.stumps.append((f, threshold, polarity))
            self.alphas.append(float(alpha))
            self.errors.append(eps)
            w = w * np.exp(-alpha * y_pm * h)
            w /= w.sum()
            self.weight_history.append(w.copy())
            if perfect:
                break
        return self

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        F = np.zeros(X.shape[0])
        for (f, thr, pol), alpha in zip(self.stumps, self.alphas):
            F += alpha * self.stump_predict(X, f, thr, pol)
        return F

    def predict_proba(self, X):
        # boosted margin estimates half the log-odds
        return sigmoid(2.0 * self.decision_function(X))

    def column_importances(self):
        # each stump's normalised impurity decrease sits entirely on its column
        imp = np.zeros(self.n_features)
        for (f, _, _), alpha in zip(self.stumps, self.alphas):
            imp[f] += alpha
        return imp

    def to_state(self):
        return {"n_features": self.n_features, "stumps": [list(s) for s in self.stumps],
                "alphas": self.alphas, "errors": self.errors}

    def load_state(self, state):
        self.n_features = int(state["n_features"])
        self.stumps = [(int(f), float(t), int(p)) for f, t, p in state["stumps"]]
        self.alphas = [float(a) for a in state["alphas"]]
        self.errors = [float(e) for e in state["errors"]]
        return self


class RandomBaseline:
    """Seeded fair coin per row, keyed on the row contents so predictions are repeatable."""

    def __init__(self):
        self.seed = 0

    def fit(self, X, y, seed=0):
        self.seed = int(seed)
        return self

    def predict_proba(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.array([
            np.random.default_rng([self.seed, zlib.crc32(row.tobytes())]).random() for row in X
        ])

    def to_state(self):
        return {"seed": self.seed}

    def load_state(self, state):
        self.seed = int(state["seed"])
        return self
