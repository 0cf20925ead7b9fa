"""Domain-knowledge text built from model feature-importance rankings.

Prompt index 0 carries no domain knowledge; odd indices list the top features
of a source model (MLFI) and even indices additionally state their order
(MLFI-ord).  Sources cycle XGB, RF, Ada, LR, Ensemble.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .classifiers import ImportanceVector, ModelKind

TEMPLATE_FILE = "prompt_v1.json"
SOURCES = ("XGB", "RF", "Ada", "LR", "Ensemble")
SOURCE_KINDS = {
    "XGB": ModelKind.GradientBoosting,
    "RF": ModelKind.RandomForest,
    "Ada": ModelKind.AdaBoost,
    "LR": ModelKind.LogisticRegression,
}
DEFAULT_TOP_K = {"MLFI": 7, "MLFIOrdered": 10}


class DkKind(str, Enum):
    NONE = "None"
    MLFI = "MLFI"
    MLFI_ORDERED = "MLFIOrdered"

    @property
    def label(self) -> str:
        return {"None": "N/A", "MLFI": "MLFI", "MLFIOrdered": "MLFI-ord"}[self.value]


@lru_cache(maxsize=None)
def load_templates(name: str = TEMPLATE_FILE) -> Mapping[str, str]:
    text = resources.files("credfair.resources").joinpath("templates", name).read_text()
    return json.loads(text)


@dataclass(frozen=True)
class DomainKnowledge:
    kind: DkKind
    source: str = "N/A"
    ranked_features: tuple[str, ...] = ()
    top_k: int = 0

    def __post_init__(self):
        none_kind = self.kind is DkKind.NONE
        if none_kind != (self.source == "N/A") or none_kind != (len(self.ranked_features) == 0):
            raise ValueError("kind=None must coincide with source N/A and an empty ranking")
        if len(set(self.ranked_features)) != len(self.ranked_features):
            raise ValueError("ranked features must be distinct")
        if not none_kind and self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "source": self.source,
                "ranked_features": list(self.ranked_features), "top_k": self.top_k}

    @classmethod
    def from_json(cls, obj) -> "DomainKnowledge":
        return cls(DkKind(obj["kind"]), obj["source"], tuple(obj["ranked_features"]), int(obj["top_k"]))


def prompt_index_map() -> dict[int, tuple[DkKind, str]]:
    mapping = {0: (DkKind.NONE, "N/A")}
    for i, source in enumerate(SOURCES):
        mapping[2 * i + 1] = (DkKind.MLFI, source)
        mapping[2 * i + 2] = (DkKind.MLFI_ORDERED, source)
    return mapping


PROMPT_INDEX_MAP = prompt_index_map()


def rank_features(imp: ImportanceVector) -> list[str]:
    return sorted(imp.scores, key=lambda name: (-imp.scores[name], name))


def ensemble_importance(vectors: Sequence[ImportanceVector]) -> ImportanceVector:
    if len(vectors) < 2:
        raise ValueError("ensemble needs at least two importance vectors")
    keys = list(vectors[0].scores)
    for v in vectors[1:]:
        if set(v.scores) != set(keys):
            raise ValueError("importance vectors cover different attribute sets")
    mean = {k: float(np.mean([v.scores[k] for v in vectors])) for k in keys}
    return ImportanceVector.normalized(mean)


def build_domain_knowledge(index: int, importances: Mapping[str, ImportanceVector],
                           top_k: Mapping[str, int] = DEFAULT_TOP_K) -> DomainKnowledge:
    """DomainKnowledge for prompt ``index`` given importance vectors keyed by source name."""
    kind, source = PROMPT_INDEX_MAP[index]
    if kind is DkKind.NONE:
        return DomainKnowledge(DkKind.NONE)
    ranking = tuple(rank_features(importances[source]))
    return DomainKnowledge(kind, source, ranking, int(top_k[kind.value]))


def _join_and(items: Sequence[str]) -> str:
    if len(items) == 1:
        return items[0]
    if len(items) == 2:
        return f"{items[0]} and {items[1]}"
    return ", ".join(items[:-1]) + ", and " + items[-1]


def _sequence(items: Sequence[str]) -> str:
    text = f"starting with the {items[0]}"
    if len(items) >= 3:
        text += ", then moving to " + ", ".join(items[1:-1])
    if len(items) >= 2:
        text += f", and finally {items[-1]}"
    return text


def render_dk(dk: DomainKnowledge, templates: Mapping[str, str] | None = None) -> str:
    if dk.kind is DkKind.NONE:
        return ""
    if dk.top_k <= 0:
        raise ValueError("top_k must be positive for MLFI domain knowledge")
    if dk.top_k > len(dk.ranked_features):
        raise ValueError(f"top_k={dk.top_k} exceeds the {len(dk.ranked_features)} ranked features")
    t = templates or load_templates()
    chosen = list(dk.ranked_features[: dk.top_k])
    if dk.kind is DkKind.MLFI:
        return t["dk_mlfi"].format(features=_join_and(chosen))
    return t["dk_mlfi_ord"].format(sequence=_sequence(chosen))
