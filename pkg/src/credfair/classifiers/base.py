from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

import numpy as np


class ModelKind(str, Enum):
    LogisticRegression = "LogisticRegression"
    KNN = "KNN"
    RandomForest = "RandomForest"
    MLP = "MLP"
    GradientBoosting = "GradientBoosting"
    AdaBoost = "AdaBoost"
    RandomBaseline = "RandomBaseline"

    @classmethod
    def parse(cls, text: str) -> "ModelKind":
        key = text.strip()
        if key in ALIASES:
            return ALIASES[key]
        return cls(key)


ALIASES = {
    "LR": ModelKind.LogisticRegression,
    "RF": ModelKind.RandomForest,
    "XGB": ModelKind.GradientBoosting,
    "GB": ModelKind.GradientBoosting,
    "Ada": ModelKind.AdaBoost,
    "random": ModelKind.RandomBaseline,
}

# Short names used in the report tables.
DISPLAY_NAMES = {
    ModelKind.RandomForest: "RF",
    ModelKind.LogisticRegression: "LR",
    ModelKind.MLP: "MLP",
    ModelKind.KNN: "KNN",
    ModelKind.GradientBoosting: "XGB",
    ModelKind.AdaBoost: "AdaBoost",
    ModelKind.RandomBaseline: "random",
}

PERMITTED: dict[ModelKind, tuple[str, ...]] = {
    ModelKind.RandomForest: ("n-estimators", "max-depth", "min-samples-split", "min-samples-leaf", "bootstrap"),
    ModelKind.LogisticRegression: ("C", "penalty", "solver"),
    ModelKind.MLP: ("hidden-layer-sizes", "activation", "solver", "alpha", "learning-rate", "max-iter"),
    ModelKind.KNN: ("n-neighbors", "weights", "algorithm", "leaf-size", "p"),
    ModelKind.GradientBoosting: ("n-estimators", "l-rate", "max-depth", "colsample-bytree"),
    ModelKind.AdaBoost: ("n-estimators", "learning-rate"),
    ModelKind.RandomBaseline: (),
}

DEFAULTS: dict[ModelKind, dict[str, Any]] = {
    ModelKind.RandomForest: {"n-estimators": 100, "max-depth": None, "min-samples-split": 2,
                             "min-samples-leaf": 1, "bootstrap": True},
    ModelKind.LogisticRegression: {"C": 1.0, "penalty": "l2", "solver": "newton"},
    ModelKind.MLP: {"hidden-layer-sizes": (32,), "activation": "relu", "solver": "momentum",
                    "alpha": 1e-4, "learning-rate": 1e-2, "max-iter": 200},
    ModelKind.KNN: {"n-neighbors": 5, "weights": "uniform", "algorithm": "brute", "leaf-size": 30, "p": 2},
    ModelKind.GradientBoosting: {"n-estimators": 100, "l-rate": 0.1, "max-depth": 3, "colsample-bytree": 1.0},
    ModelKind.AdaBoost: {"n-estimators": 50, "learning-rate": 1.0},
    ModelKind.RandomBaseline: {},
}


class TrainingError(ValueError):
    pass


class UnsupportedOperation(TypeError):
    pass


class WidthMismatch(ValueError):
    def __init__(self, expected: int, actual: int):
        self.expected, self.actual = expected, actual
        super().__init__(f"row width mismatch: expected {expected} columns, got {actual}")


@dataclass(frozen=True)
class Hyperparameters:
    kind: ModelKind
    values: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        kind = ModelKind.parse(self.kind) if isinstance(self.kind, str) else self.kind
        object.__setattr__(self, "kind", kind)
        unknown = set(self.values) - set(PERMITTED[kind])
        if unknown:
            raise ValueError(f"{kind.value}: unknown hyperparameter(s) {sorted(unknown)}; "
                             f"permitted: {list(PERMITTED[kind])}")
        merged = dict(DEFAULTS[kind])
        merged.update(self.values)
        if "hidden-layer-sizes" in merged:
            merged["hidden-layer-sizes"] = tuple(int(h) for h in np.atleast_1d(merged["hidden-layer-sizes"]))
        object.__setattr__(self, "values", merged)

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def to_json(self) -> dict:
        values = {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}
        return {"kind": self.kind.value, "values": values}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Hyperparameters":
        return cls(ModelKind(obj["kind"]), dict(obj["values"]))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss(p, y):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint32)[0])
