"""Randomized hyperparameter search with stratified k-fold cross-validation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .classifiers import (PERMITTED, Hyperparameters, ModelKind, derive_seed, predict_labels,
                          train)
from .data import EncodedMatrix
from .fairness import CostWeights, confusion, metrics

SCORERS = ("f1", "precision", "recall", "cost")


@dataclass(frozen=True)
class Choice:
    options: tuple

    def sample(self, rng):
        return self.options[int(rng.integers(len(self.options)))]

    def to_json(self):
        return {"type": "choice", "options": [list(o) if isinstance(o, tuple) else o for o in self.options]}


@dataclass(frozen=True)
class IntRange:
    low: int
    high: int  # inclusive
    step: int = 1

    def sample(self, rng):
        return int(self.low + self.step * rng.integers((self.high - self.low) // self.step + 1))

    def to_json(self):
        return {"type": "int", "low": self.low, "high": self.high, "step": self.step}


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def sample(self, rng):
        return float(rng.uniform(self.low, self.high))

    def to_json(self):
        return {"type": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class LogUniform:
    low: float
    high: float

    def sample(self, rng):
        return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))

    def to_json(self):
        return {"type": "loguniform", "low": self.low, "high": self.high}


def distribution_from_json(obj: Mapping):
    kind = obj["type"]
    if kind == "choice":
        return Choice(tuple(tuple(o) if isinstance(o, list) else o for o in obj["options"]))
    if kind == "int":
        return IntRange(int(obj["low"]), int(obj["high"]), int(obj.get("step", 1)))
    if kind == "uniform":
        return Uniform(float(obj["low"]), float(obj["high"]))
    if kind == "loguniform":
        return LogUniform(float(obj["low"]), float(obj["high"]))
    raise ValueError(f"unknown distribution type {kind!r}")


@dataclass(frozen=True)
class SearchSpace:
    kind: ModelKind
    distributions: Mapping[str, Any]

    def __post_init__(self):
        expected = set(PERMITTED[self.kind])
        got = set(self.distributions)
        if got != expected:
            raise ValueError(f"{self.kind.value} search space must cover exactly {sorted(expected)}; "
                             f"missing {sorted(expected - got)}, unknown {sorted(got - expected)}")

    def sample(self, rng) -> Hyperparameters:
        # fixed name order so draws don't depend on mapping insertion order
        return Hyperparameters(self.kind, {name: self.distributions[name].sample(rng)
                                           for name in PERMITTED[self.kind]})

    def to_json(self):
        return {"kind": self.kind.value,
                "distributions": {k: v.to_json() for k, v in self.distributions.items()}}

    @classmethod
    def from_json(cls, obj):
        return cls(ModelKind(obj["kind"]),
                   {k: distribution_from_json(v) for k, v in obj["distributions"].items()})


def default_space(kind: ModelKind) -> SearchSpace:
    spaces = {
        ModelKind.RandomForest: {
            "n-estimators": IntRange(50, 400),
            "max-depth": Choice((*range(2, 17), None)),
            "min-samples-split": IntRange(2, 20),
            "min-samples-leaf": IntRange(1, 10),
            "bootstrap": Choice((True, False)),
        },
        ModelKind.LogisticRegression: {
            "C": LogUniform(1e-3, 1e2),
            "penalty": Choice(("l1", "l2")),
            "solver": Choice(("gradient-descent", "newton")),
        },
        ModelKind.KNN: {
            "n-neighbors": IntRange(3, 31, 2),
            "weights": Choice(("uniform", "distance")),
            "algorithm": Choice(("brute", "kd-tree")),
            "leaf-size": IntRange(10, 50),
            "p": Choice((1, 2)),
        },
        ModelKind.MLP: {
            "hidden-layer-sizes": Choice(((16,), (32,), (64,), (32, 16))),
            "activation": Choice(("relu", "tanh", "logistic")),
            "solver": Choice(("gd", "momentum")),
            "alpha": LogUniform(1e-5, 1e-1),
            "learning-rate": Choice((1e-3, 1e-2)),
            "max-iter": Choice((200, 500)),
        },
        ModelKind.GradientBoosting: {
            "n-estimators": IntRange(50, 300),
            "l-rate": Uniform(0.01, 0.3),
            "max-depth": IntRange(2, 6),
            "colsample-bytree": Uniform(0.5, 1.0),
        },
        ModelKind.AdaBoost: {
            "n-estimators": IntRange(50, 400),
            "learning-rate": Uniform(0.1, 1.0),
        },
        ModelKind.RandomBaseline: {},
    }
    return SearchSpace(kind, spaces[kind])


def kfold_indices(n: int, k: int, seed: int, labels: Sequence[int] | None = None) -> list[np.ndarray]:
    """Shuffle-and-deal folds; with ``labels`` each class is dealt round-robin (stratified).

    Dealing a single concatenated class-ordered permutation keeps fold sizes within one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} instances")
    rng = np.random.default_rng(seed)
    if labels is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(labels)
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    folds = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(int(idx))
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def score_predictions(preds, labels, metric: str) -> float:
    report = metrics(confusion(preds, labels), CostWeights())
    if metric == "cost":
        return -(report.fp_cost + report.fn_cost)
    return float(getattr(report, metric))


@dataclass
class Trial:
    index: int
    hyperparameters: Hyperparameters
    fold_scores: list[float]
    mean_score: float
    error: str | None = None

    def to_json(self):
        return {"index": self.index, "hyperparameters": self.hyperparameters.to_json(),
                "fold_scores": [_json_float(s) for s in self.fold_scores],
                "mean_score": _json_float(self.mean_score), "error": self.error}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["index"], Hyperparameters.from_json(obj["hyperparameters"]),
                   [_parse_float(s) for s in obj["fold_scores"]], _parse_float(obj["mean_score"]), obj["error"])


def _json_float(x):
    return "-inf" if x == -math.inf else x


def _parse_float(x):
    return -math.inf if x == "-inf" else float(x)


@dataclass
class SearchResult:
    best: Hyperparameters
    trials: list[Trial]
    metric: str
    seed: int
    folds: list[list[int]] = field(default_factory=list, repr=False)

    @property
    def best_score(self) -> float:
        return max(t.mean_score for t in self.trials)

    def to_json(self):
        return {"best": self.best.to_json(), "best_score": _json_float(self.best_score),
                "metric": self.metric, "seed": self.seed,
                "trials": [t.to_json() for t in self.trials]}

    @classmethod
    def from_json(cls, obj):
        return cls(Hyperparameters.from_json(obj["best"]), [Trial.from_json(t) for t in obj["trials"]],
                   obj["metric"], obj["seed"])


def _run_trial(index, hp, data, folds, metric, seed):
    n = data.rows.shape[0]
    scores = []
    for f, held_out in enumerate(folds):
        mask = np.ones(n, dtype=bool)
        mask[held_out] = False
        train_pos = np.flatnonzero(mask)
        try:
            model = train(hp, data.take(train_pos), seed=derive_seed(seed, index, f))
            scores.append(score_predictions(predict_labels(model, data.rows[held_out]),
                                            data.labels[held_out], metric))
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            return Trial(index, hp, scores, -math.inf, error=f"fold {f}: {exc}")
    return Trial(index, hp, scores, float(np.mean(scores)))


def randomized_search(kind: ModelKind, space: SearchSpace, data: EncodedMatrix, iters: int = 20, k: int = 5,
                      metric: str = "f1", seed: int = 0, n_jobs: int = 1) -> SearchResult:
    """Sample ``iters`` configurations and score each by mean ``metric`` over stratified k folds.

    Every (trial, fold) draws from its own derived seed, so ``n_jobs`` never changes the result.
    Failed trials are kept with a score of -inf.
    """
    if metric not in SCORERS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {SCORERS}")
    if space.kind is not kind:
        raise ValueError(f"search space is for {space.kind.value}, not {kind.value}")
    folds = kfold_indices(len(data.labels), k, derive_seed(seed, 0xF01D), labels=data.labels)
    configs = [space.sample(np.random.default_rng(derive_seed(seed, i))) for i in range(iters)]
    jobs = [(i, hp, data, folds, metric, seed) for i, hp in enumerate(configs)]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trials = list(pool.map(lambda a: _run_trial(*a), jobs))
    else:
        trials = [_run_trial(*a) for a in jobs]
    best = max(trials, key=lambda t: (t.mean_score, -t.index))
    return SearchResult(best.hyperparameters, trials, metric, seed, folds=[f.tolist() for f in folds])
