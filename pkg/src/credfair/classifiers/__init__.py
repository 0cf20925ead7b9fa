"""The six classical models plus a coin-flip baseline behind one train/predict surface."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..data import EncodedMatrix
from .base import (ALIASES, DEFAULTS, DISPLAY_NAMES, PERMITTED, Hyperparameters, ModelKind,
                   TrainingError, UnsupportedOperation, WidthMismatch, derive_seed)
from .ensemble import AdaBoost, GradientBoosting, RandomBaseline, RandomForest
from .knn import KNN
from .linear import LogisticRegression
from .mlp import MLP

__all__ = [
    "ALIASES", "DEFAULTS", "DISPLAY_NAMES", "PERMITTED", "Hyperparameters", "ImportanceVector",
    "ModelKind", "TrainedModel", "TrainingError", "UnsupportedOperation", "WidthMismatch",
    "derive_seed", "feature_importance", "load_model", "predict", "predict_labels",
    "predict_proba", "save_model", "train",
]

SNAPSHOT_FORMAT = "credfair-model"
SNAPSHOT_VERSION = 1
THRESHOLD = 0.5
IMPORTANCE_KINDS = (ModelKind.RandomForest, ModelKind.GradientBoosting,
                    ModelKind.AdaBoost, ModelKind.LogisticRegression)


def _make_estimator(hp: Hyperparameters):
    v = hp.values
    kind = hp.kind
    if kind is ModelKind.LogisticRegression:
        return LogisticRegression(C=v["C"], penalty=v["penalty"], solver=v["solver"])
    if kind is ModelKind.KNN:
        return KNN(n_neighbors=v["n-neighbors"], weights=v["weights"], algorithm=v["algorithm"],
                   leaf_size=v["leaf-size"], p=v["p"])
    if kind is ModelKind.RandomForest:
        return RandomForest(n_estimators=v["n-estimators"], max_depth=v["max-depth"],
                            min_samples_split=v["min-samples-split"],
                            min_samples_leaf=v["min-samples-leaf"], bootstrap=v["bootstrap"])
    if kind is ModelKind.MLP:
        return MLP(hidden_layer_sizes=v["hidden-layer-sizes"], activation=v["activation"],
                   solver=v["solver"], alpha=v["alpha"], learning_rate=v["learning-rate"],
                   max_iter=v["max-iter"])
    if kind is ModelKind.GradientBoosting:
        return GradientBoosting(n_estimators=v["n-estimators"], l_rate=v["l-rate"],
                                max_depth=v["max-depth"], colsample_bytree=v["colsample-bytree"])
    if kind is ModelKind.AdaBoost:
        return AdaBoost(n_estimators=v["n-estimators"], learning_rate=v["learning-rate"])
    return RandomBaseline()


@dataclass(frozen=True)
class TrainedModel:
    kind: ModelKind
    hyperparameters: Hyperparameters
    estimator: object = field(repr=False)
    train_seed: int
    column_names: tuple[str, ...]
    group_map: Mapping[str, tuple[int, int]]
    converged: bool = True

    @property
    def warnings(self) -> list[str]:
        return [] if self.converged else [f"{self.kind.value} did not converge within its iteration budget"]


def train(hp: Hyperparameters, data: EncodedMatrix, seed: int = 0) -> TrainedModel:
    """Fit ``hp.kind`` on ``data``; deterministic for a fixed (hp, data, seed)."""
    X, y = data.rows, np.asarray(data.labels)
    if hp.kind is not ModelKind.RandomBaseline:
        if len(y) == 0:
            raise TrainingError("empty training data")
        if len(np.unique(y)) < 2:
            raise TrainingError(f"{hp.kind.value}: training data contains a single class")
    est = _make_estimator(hp).fit(X, y, seed=seed)
    return TrainedModel(
        kind=hp.kind,
        hyperparameters=hp,
        estimator=est,
        train_seed=int(seed),
        column_names=tuple(data.column_names),
        group_map=dict(data.group_map),
        converged=bool(getattr(est, "converged", True)),
    )


def predict_proba(model: TrainedModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != len(model.column_names):
        raise WidthMismatch(len(model.column_names), X.shape[1])
    return np.clip(model.estimator.predict_proba(X), 0.0, 1.0)


def predict_labels(model: TrainedModel, X) -> np.ndarray:
    return (predict_proba(model, X) >= THRESHOLD).astype(np.int64)


def predict(model: TrainedModel, row) -> tuple[int, float]:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError("predict expects a single encoded row")
    score = float(predict_proba(model, row[None, :])[0])
    return int(score >= THRESHOLD), score


@dataclass(frozen=True)
class ImportanceVector:
    scores: Mapping[str, float]

    def __post_init__(self):
        values = np.array(list(self.scores.values()), dtype=np.float64)
        if np.any(values < 0):
            raise ValueError("importance scores must be non-negative")
        if abs(values.sum() - 1.0) > 1e-9:
            raise ValueError(f"importance scores must sum to 1, got {values.sum()!r}")

    @classmethod
    def normalized(cls, raw: Mapping[str, float]) -> "ImportanceVector":
        total = float(sum(raw.values()))
        if total <= 0:
            # a model that never split carries no ranking information
            return cls({k: 1.0 / len(raw) for k in raw})
        return cls({k: float(v) / total for k, v in raw.items()})

    def to_json(self) -> dict:
        return dict(self.scores)


def feature_importance(model: TrainedModel) -> ImportanceVector:
    if model.kind not in IMPORTANCE_KINDS:
        raise UnsupportedOperation(f"feature importance is not defined for {model.kind.value}")
    cols = np.asarray(model.estimator.column_importances(), dtype=np.float64)
    raw = {attr: float(cols[start:stop].sum()) for attr, (start, stop) in model.group_map.items()}
    return ImportanceVector.normalized(raw)


def save_model(model: TrainedModel, path) -> Path:
    path = Path(path)
    snapshot = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "hyperparameters": model.hyperparameters.to_json(),
        "train_seed": model.train_seed,
        "column_names": list(model.column_names),
        "group_map": {k: list(v) for k, v in model.group_map.items()},
        "converged": model.converged,
        "state": model.estimator.to_state(),
    }
    path.write_text(json.dumps(snapshot, sort_keys=True))
    return path


def load_model(path) -> TrainedModel:
    snapshot = json.loads(Path(path).read_text())
    if snapshot.get("format") != SNAPSHOT_FORMAT or snapshot.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: not a version-{SNAPSHOT_VERSION} model snapshot")
    hp = Hyperparameters.from_json(snapshot["hyperparameters"])
    est = _make_estimator(hp).load_state(snapshot["state"])
    return TrainedModel(
        kind=hp.kind,
        hyperparameters=hp,
        estimator=est,
        train_seed=int(snapshot["train_seed"]),
        column_names=tuple(snapshot["column_names"]),
        group_map={k: tuple(v) for k, v in snapshot["group_map"].items()},
        converged=bool(snapshot["converged"]),
    )
