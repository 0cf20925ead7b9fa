"""Experiment configuration: YAML file -> nested dataclasses, with flag overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .classifiers import DISPLAY_NAMES, ModelKind
from .llm import BackendConfig

ALL_MODELS = ("RF", "LR", "MLP", "KNN", "XGB", "AdaBoost", "random")


@dataclass
class DatasetConfig:
    path: str | None = None  # None -> bundled Statlog file
    format: str = "statlog-raw"
    train_fraction: float = 0.8
    split_seed: int = 42
    stratified: bool = True


@dataclass
class SearchConfig:
    iters: int = 20
    folds: int = 5
    metric: str = "f1"
    seed: int = 0
    n_jobs: int = 1
    spaces: dict[str, Any] = field(default_factory=dict)  # kind -> SearchSpace JSON override


@dataclass
class PromptConfig:
    indices: list[int] = field(default_factory=lambda: list(range(11)))
    incontext_n: int = 20
    incontext_seed: int = 0
    attribute_subset: list[str] | None = None
    include_sex: bool = True
    top_k: dict[str, int] = field(default_factory=lambda: {"MLFI": 7, "MLFIOrdered": 10})
    model_id: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = 16
    token_budget: int = 15000
    unparseable_policy: str = "strict"


@dataclass
class FairnessConfig:
    n_resamples: int = 1000
    alpha: float = 0.05
    seed: int = 0
    test: str = "bootstrap"


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    models: list[str] = field(default_factory=lambda: list(ALL_MODELS))
    search: SearchConfig = field(default_factory=SearchConfig)
    prompts: PromptConfig = field(default_factory=PromptConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    fairness: FairnessConfig = field(default_factory=FairnessConfig)
    output_dir: str = "runs"

    def validate(self) -> "ExperimentConfig":
        if self.dataset.path is not None and not Path(self.dataset.path).exists():
            raise FileNotFoundError(f"dataset not found: {self.dataset.path}")
        bad = [i for i in self.prompts.indices if not 0 <= int(i) <= 10]
        if bad:
            raise ValueError(f"prompt indices must lie in 0..10, got {bad}")
        for name in self.models:
            ModelKind.parse(name)
        if self.fairness.test not in ("bootstrap", "permutation"):
            raise ValueError(f"unknown fairness test {self.fairness.test!r}")
        if self.backend.mode == "replay" and not Path(self.backend.cache_path).exists():
            raise FileNotFoundError(f"replay cache not found: {self.backend.cache_path}")
        return self

    @property
    def model_kinds(self) -> list[ModelKind]:
        return [ModelKind.parse(m) for m in self.models]

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: Mapping | None) -> "ExperimentConfig":
        obj = dict(obj or {})
        sections = {"dataset": DatasetConfig, "search": SearchConfig, "prompts": PromptConfig,
                    "backend": BackendConfig, "fairness": FairnessConfig}
        kwargs = {}
        for key, value in obj.items():
            if key in sections:
                kwargs[key] = _build(sections[key], value or {})
            elif key in ("models", "output_dir"):
                kwargs[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**kwargs)


def _build(cls, values: Mapping):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**values)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.from_json(yaml.safe_load(Path(path).read_text()))


def apply_overrides(cfg: ExperimentConfig, *, out=None, seed=None, backend=None, mock_rule=None,
                    prompts=None, models=None, test=None, cache=None) -> ExperimentConfig:
    """Return a copy with command-line flags applied on top of the file values."""
    data = cfg.to_json()
    if out is not None:
        data["output_dir"] = str(out)
    if seed is not None:
        data["dataset"]["split_seed"] = seed
        data["search"]["seed"] = seed
        data["prompts"]["incontext_seed"] = seed
        data["fairness"]["seed"] = seed
        data["backend"]["mock_seed"] = seed
    if backend is not None:
        data["backend"]["mode"] = backend
    if mock_rule is not None:
        data["backend"]["mock_rule"] = mock_rule
    if cache is not None:
        data["backend"]["cache_path"] = str(cache)
    if prompts is not None:
        data["prompts"]["indices"] = list(prompts)
    if models is not None:
        data["models"] = list(models)
    if test is not None:
        data["fairness"]["test"] = test
    return ExperimentConfig.from_json(data)


def display_name(kind: ModelKind) -> str:
    return DISPLAY_NAMES[kind]
