"""Loading, validation, encoding and splitting of the German Credit data."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FORMATS = ("statlog-raw", "cleaned-csv")
EXPECTED_ROWS = 1000
MALE, FEMALE = "Male", "Female"


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaValidationError(ValueError):
    pass


class SplitError(ValueError):
    pass


class RowCountWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AttributeSchema:
    name: str
    kind: str  # "categorical" | "numeric"
    position: int
    description: str = ""
    categories: tuple[tuple[str, str], ...] = ()
    unit: str = ""

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise SchemaValidationError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(self.categories) < 2:
            raise SchemaValidationError(f"{self.name}: categorical attribute needs >= 2 categories")
        if self.kind == "numeric" and self.categories:
            raise SchemaValidationError(f"{self.name}: numeric attribute cannot have categories")

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(code for code, _ in self.categories)

    def describe(self, code: str) -> str:
        return dict(self.categories)[code]


@dataclass(frozen=True)
class Schema:
    """Feature attributes plus the target column and the sex derivation table."""

    attributes: tuple[AttributeSchema, ...]
    target_position: int
    label_map: Mapping[str, int]
    sex_attribute: str
    sex_map: Mapping[str, str]  # raw code -> Male/Female
    version: int = 1

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaValidationError("attribute names must be unique")
        if len(self.attributes) + 1 != 21:
            raise SchemaValidationError(
                f"expected 20 feature attributes + 1 target, got {len(self.attributes)} + 1")
        if self.sex_attribute not in names:
            raise SchemaValidationError(f"sex attribute {self.sex_attribute!r} not in schema")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def __getitem__(self, name: str) -> AttributeSchema:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    @classmethod
    def from_json(cls, obj: Mapping) -> "Schema":
        attrs = tuple(
            AttributeSchema(
                name=a["name"],
                kind=a["kind"],
                position=int(a["position"]),
                description=a.get("description", ""),
                categories=tuple((k, v) for k, v in a.get("categories", {}).items()),
                unit=a.get("unit", ""),
            )
            for a in obj["attributes"]
        )
        sex = obj["sex"]
        sex_map = {code: MALE for code in sex[MALE]}
        sex_map.update({code: FEMALE for code in sex[FEMALE]})
        return cls(
            attributes=attrs,
            target_position=int(obj["target"]["position"]),
            label_map={str(k): int(v) for k, v in obj["target"]["labels"].items()},
            sex_attribute=sex["attribute"],
            sex_map=sex_map,
            version=int(obj.get("version", 1)),
        )


def load_schema(path: str | Path | None = None) -> Schema:
    """Load the attribute schema; defaults to the bundled German Credit schema."""
    if path is None:
        text = resources.files("credfair.resources").joinpath("german_schema.json").read_text()
    else:
        text = Path(path).read_text()
    return Schema.from_json(json.loads(text))


def bundled_dataset_path() -> Path:
    return Path(str(resources.files("credfair.resources").joinpath("german.data")))


@dataclass(frozen=True)
class Instance:
    uid: int
    features: Mapping[str, object]
    sex: str
    label: int


@dataclass(frozen=True)
class Dataset:
    schema: Schema
    instances: tuple[Instance, ...]
    provenance: str = ""

    def __post_init__(self):
        if not self.instances:
            raise ParseError("dataset is empty")

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def labels(self) -> np.ndarray:
        return np.array([inst.label for inst in self.instances], dtype=np.int64)

    @property
    def uids(self) -> list[int]:
        return [inst.uid for inst in self.instances]

    def subset(self, positions: Sequence[int]) -> "Dataset":
        return Dataset(self.schema, tuple(self.instances[i] for i in positions), self.provenance)


def _coerce_numeric(text: str, attr: str, line: int) -> int | float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaValidationError(f"line {line}: attribute {attr}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise SchemaValidationError(f"line {line}: attribute {attr}: non-finite value {text!r}")
    return int(value) if value.is_integer() else value


def _build_instance(schema: Schema, uid: int, raw: Mapping[str, str], label_raw: str, line: int) -> Instance:
    features: dict[str, object] = {}
    for attr in schema.attributes:
        value = raw[attr.name]
        if attr.kind == "categorical":
            if value not in attr.codes:
                raise SchemaValidationError(
                    f"line {line}: attribute {attr.name}: unknown category code {value!r}")
            features[attr.name] = value
        else:
            features[attr.name] = _coerce_numeric(value, attr.name, line)
    if label_raw not in schema.label_map:
        raise SchemaValidationError(f"line {line}: unknown label {label_raw!r}")
    sex = schema.sex_map.get(features[schema.sex_attribute])
    if sex is None:
        raise SchemaValidationError(
            f"line {line}: no sex mapping for {schema.sex_attribute}={features[schema.sex_attribute]!r}")
    return Instance(uid=uid, features=features, sex=sex, label=schema.label_map[label_raw])


def _read_statlog(path: Path, schema: Schema) -> list[Instance]:
    width = len(schema.attributes) + 1
    instances = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != width:
                raise ParseError(f"expected {width} fields, got {len(fields)}", line=lineno)
            raw = {a.name: fields[a.position] for a in schema.attributes}
            instances.append(_build_instance(schema, len(instances), raw, fields[schema.target_position], lineno))
    return instances


def _read_cleaned(path: Path, schema: Schema) -> list[Instance]:
    # cleaned rows carry descriptions; map them back to raw codes
    reverse = {a.name: {desc: code for code, desc in a.categories} for a in schema.attributes}
    label_names = {"good": 1, "bad": 0, "1": 1, "0": 0}
    instances = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", line=1)
        expected = schema.names + ["sex", "label"]
        if header != expected:
            raise ParseError(f"header mismatch: expected {expected}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise ParseError(f"expected {len(expected)} fields, got {len(row)}", line=lineno)
            raw = {}
            for attr, value in zip(schema.attributes, row):
                if attr.kind == "categorical":
                    if value not in reverse[attr.name]:
                        raise SchemaValidationError(
                            f"line {lineno}: attribute {attr.name}: unknown category {value!r}")
                    value = reverse[attr.name][value]
                raw[attr.name] = value
            label = label_names.get(row[-1].strip().lower())
            if label is None:
                raise SchemaValidationError(f"line {lineno}: unknown label {row[-1]!r}")
            label_raw = next(k for k, v in schema.label_map.items() if v == label)
            inst = _build_instance(schema, len(instances), raw, label_raw, lineno)
            if row[-2] != inst.sex:
                raise SchemaValidationError(
                    f"line {lineno}: sex column {row[-2]!r} disagrees with {schema.sex_attribute}")
            instances.append(inst)
    return instances


def load_raw(path: str | Path, format: str = "statlog-raw", schema: Schema | None = None) -> Dataset:
    """Read a German Credit file in either the raw Statlog or the cleaned CSV layout.

    Labels come out as 1 = good credit, 0 = bad credit; ``sex`` is derived from
    the personal-status attribute via the schema's mapping table.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    schema = schema or load_schema()
    reader = _read_statlog if format == "statlog-raw" else _read_cleaned
    instances = reader(path, schema)
    if not instances:
        raise ParseError("no instances found", line=0)
    if len(instances) != EXPECTED_ROWS:
        warnings.warn(f"{path}: {len(instances)} rows, expected {EXPECTED_ROWS}", RowCountWarning, stacklevel=2)
    return Dataset(schema, tuple(instances), provenance=f"{path}#{format}")


def write_cleaned_csv(dataset: Dataset, path: str | Path) -> Path:
    """Convert a dataset to the cleaned CSV layout (descriptions, explicit sex/label)."""
    path = Path(path)
    schema = dataset.schema
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.names + ["sex", "label"])
        for inst in dataset:
            row = []
            for attr in schema.attributes:
                value = inst.features[attr.name]
                row.append(attr.describe(value) if attr.kind == "categorical" else value)
            writer.writerow(row + [inst.sex, "good" if inst.label == 1 else "bad"])
    return path


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise SplitError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    n = len(dataset)
    n_train = _round_half_up(spec.train_fraction * n)
    if n_train == 0 or n_train == n:
        raise SplitError(f"train_fraction {spec.train_fraction} leaves an empty side for n={n}")
    rng = np.random.default_rng(spec.seed)
    if not spec.stratified:
        order = rng.permutation(n)
        train_pos = np.sort(order[:n_train])
    else:
        labels = dataset.labels
        classes = np.unique(labels)
        # largest-remainder allocation keeps per-class counts within one of the target
        exact = {c: spec.train_fraction * np.sum(labels == c) for c in classes}
        alloc = {c: int(math.floor(v)) for c, v in exact.items()}
        short = n_train - sum(alloc.values())
        for c in sorted(classes, key=lambda c: (-(exact[c] - alloc[c]), c))[:short]:
            alloc[c] += 1
        chosen = []
        for c in classes:
            members = np.flatnonzero(labels == c)
            chosen.append(rng.permutation(members)[: alloc[c]])
        train_pos = np.sort(np.concatenate(chosen))
    mask = np.zeros(n, dtype=bool)
    mask[train_pos] = True
    test_pos = np.flatnonzero(~mask)
    return dataset.subset(train_pos.tolist()), dataset.subset(test_pos.tolist())


@dataclass(frozen=True)
class EncodedMatrix:
    rows: np.ndarray
    column_names: tuple[str, ...]
    group_map: Mapping[str, tuple[int, int]]  # attribute -> [start, stop) column range
    labels: np.ndarray
    sex: tuple[str, ...]
    uids: tuple[int, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    def take(self, positions) -> "EncodedMatrix":
        positions = np.asarray(positions)
        return EncodedMatrix(
            rows=self.rows[positions],
            column_names=self.column_names,
            group_map=self.group_map,
            labels=self.labels[positions],
            sex=tuple(self.sex[i] for i in positions),
            uids=tuple(self.uids[i] for i in positions) if self.uids else (),
        )


@dataclass(frozen=True)
class Encoder:
    """One-hot for categoricals, min-max for numerics, with scaling fit once."""

    schema: Schema
    minmax: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def fit(cls, dataset: Dataset) -> "Encoder":
        minmax = {}
        for attr in dataset.schema.attributes:
            if attr.kind == "numeric":
                values = [float(inst.features[attr.name]) for inst in dataset]
                minmax[attr.name] = (min(values), max(values))
        return cls(dataset.schema, minmax)

    def layout(self) -> tuple[tuple[str, ...], dict[str, tuple[int, int]]]:
        names: list[str] = []
        groups = {}
        for attr in self.schema.attributes:
            start = len(names)
            if attr.kind == "categorical":
                names.extend(f"{attr.name}={code}" for code in attr.codes)
            else:
                names.append(attr.name)
            groups[attr.name] = (start, len(names))
        return tuple(names), groups

    def transform(self, dataset: Dataset) -> EncodedMatrix:
        names, groups = self.layout()
        X = np.zeros((len(dataset), len(names)), dtype=np.float64)
        for attr in self.schema.attributes:
            start, _ = groups[attr.name]
            if attr.kind == "categorical":
                index = {code: i for i, code in enumerate(attr.codes)}
                for r, inst in enumerate(dataset):
                    X[r, start + index[inst.features[attr.name]]] = 1.0
            else:
                lo, hi = self.minmax[attr.name]
                span = hi - lo
                col = np.array([float(inst.features[attr.name]) for inst in dataset])
                X[:, start] = (col - lo) / span if span > 0 else 0.0
        return EncodedMatrix(
            rows=X,
            column_names=names,
            group_map=groups,
            labels=dataset.labels,
            sex=tuple(inst.sex for inst in dataset),
            uids=tuple(dataset.uids),
        )

    def decode_row(self, row: np.ndarray) -> dict[str, object]:
        """Recover raw category codes (and unscaled numerics) from an encoded row."""
        _, groups = self.layout()
        out: dict[str, object] = {}
        for attr in self.schema.attributes:
            start, stop = groups[attr.name]
            if attr.kind == "categorical":
                out[attr.name] = attr.codes[int(np.argmax(row[start:stop]))]
            else:
                lo, hi = self.minmax[attr.name]
                out[attr.name] = lo + row[start] * (hi - lo)
        return out


def encode(dataset: Dataset, encoder: Encoder | None = None) -> EncodedMatrix:
    """Encode ``dataset``; scaling is fit on ``dataset`` itself unless an encoder is given."""
    return (encoder or Encoder.fit(dataset)).transform(dataset)
