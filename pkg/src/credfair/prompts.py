"""Five-part prompt assembly: instruction, examples, attribute glossary, domain knowledge, question."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, Instance, Schema
from .knowledge import load_templates

DEFAULT_TOKEN_BUDGET = 15000
CHARS_PER_TOKEN = 4


class TokenBudgetExceeded(ValueError):
    def __init__(self, estimated: int, budget: int):
        self.estimated, self.budget = estimated, budget
        super().__init__(f"prompt needs ~{estimated} tokens, budget is {budget}; reduce the example count")


class InsufficientExamples(ValueError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def to_json(self) -> dict:
        return {"role": self.role, "content": self.content}


ChatMessageSeq = tuple[ChatMessage, ...]


@dataclass(frozen=True)
class PromptParts:
    instruction: str
    incontext: tuple[str, ...]
    attribute_description: str
    dk_text: str
    question: str
    query: str = ""  # rendered applicant, placed at the head of part 5
    incontext_uids: tuple[int, ...] = ()
    query_uid: int | None = None
    templates: Mapping[str, str] = field(default_factory=load_templates, repr=False, compare=False)

    def __post_init__(self):
        if not self.instruction.strip() or not self.question.strip():
            raise ValueError("instruction and question must be non-empty")


@dataclass(frozen=True)
class InContextSpec:
    n: int = 20
    strategy: str = "stratified-random"
    seed: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("example count must be >= 0")
        if self.strategy != "stratified-random":
            raise ValueError(f"unknown in-context strategy {self.strategy!r}")


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / CHARS_PER_TOKEN)


def select_incontext(train: Dataset, spec: InContextSpec) -> list[Instance]:
    """Balanced draw of ``spec.n`` training instances (odd counts favour label 1), shuffled."""
    if spec.n == 0:
        return []
    n_good = (spec.n + 1) // 2
    want = {1: n_good, 0: spec.n - n_good}
    rng = np.random.default_rng(spec.seed)
    chosen: list[Instance] = []
    for label in (1, 0):
        pool = [inst for inst in train if inst.label == label]
        if len(pool) < want[label]:
            raise InsufficientExamples(
                f"need {want[label]} instances with label {label}, only {len(pool)} available "
                f"(deficit {want[label] - len(pool)})")
        picks = rng.choice(len(pool), size=want[label], replace=False)
        chosen.extend(pool[i] for i in picks)
    return [chosen[i] for i in rng.permutation(len(chosen))]


def _format_value(schema: Schema, name: str, value) -> str:
    attr = schema[name]
    if attr.kind == "categorical":
        return attr.describe(value)
    if attr.unit == "%":
        return f"{value}%"
    return f"{value} {attr.unit}".rstrip()


def prompt_attributes(schema: Schema, subset: Sequence[str] | None = None, include_sex: bool = True) -> list[str]:
    names = list(subset) if subset else schema.names
    unknown = set(names) - set(schema.names)
    if unknown:
        raise ValueError(f"unknown attributes in subset: {sorted(unknown)}")
    if not include_sex:
        names = [n for n in names if n != schema.sex_attribute]
    return names


def render_example(inst: Instance, schema: Schema, attributes: Sequence[str] | None = None,
                   templates: Mapping[str, str] | None = None) -> str:
    t = templates or load_templates()
    names = attributes or schema.names
    details = "; ".join(f"{n}: {_format_value(schema, n, inst.features[n])}" for n in names)
    verdict = t["example_verdict"].format(verdict="good" if inst.label == 1 else "bad", label=inst.label)
    return f"{t['example_lead']} {details}. {verdict}"


def render_query(inst: Instance, schema: Schema, attributes: Sequence[str] | None = None,
                 templates: Mapping[str, str] | None = None) -> str:
    t = templates or load_templates()
    names = attributes or schema.names
    lines = [f"- {n}: {_format_value(schema, n, inst.features[n])}" for n in names]
    return "\n".join([t["query_header"], *lines])


def render_attribute_description(schema: Schema, attributes: Sequence[str] | None = None,
                                 templates: Mapping[str, str] | None = None) -> str:
    t = templates or load_templates()
    names = attributes or schema.names
    return "\n".join([t["attribute_header"], *(f"- {n}: {schema[n].description}" for n in names)])


def build_prompt(parts: PromptParts, token_budget: int = DEFAULT_TOKEN_BUDGET) -> ChatMessageSeq:
    t = parts.templates
    sections = []
    if parts.incontext:
        header = t["incontext_header_one"] if len(parts.incontext) == 1 else t["incontext_header_many"]
        sections.append("\n".join([header, *parts.incontext]))
    sections.append(parts.attribute_description)
    if parts.dk_text:
        sections.append(f"{t['dk_header']}\n{parts.dk_text}")
    sections.append(f"{parts.query}\n\n{parts.question}" if parts.query else parts.question)
    messages = (ChatMessage("system", parts.instruction), ChatMessage("user", "\n\n".join(sections)))
    estimated = sum(estimate_tokens(m.content) for m in messages)
    if estimated > token_budget:
        raise TokenBudgetExceeded(estimated, token_budget)
    return messages


@dataclass(frozen=True)
class PromptBuilder:
    """Binds schema, examples and dk text; call it with an applicant to get its PromptParts."""

    schema: Schema
    examples: tuple[Instance, ...]
    dk_text: str = ""
    attribute_subset: tuple[str, ...] | None = None
    include_sex: bool = True
    templates: Mapping[str, str] = field(default_factory=load_templates, repr=False)

    @property
    def attributes(self) -> list[str]:
        return prompt_attributes(self.schema, self.attribute_subset, self.include_sex)

    def __call__(self, query: Instance) -> PromptParts:
        if any(ex.uid == query.uid for ex in self.examples):
            raise ValueError(f"instance {query.uid} is both an in-context example and the query")
        attrs = self.attributes
        return PromptParts(
            instruction=self.templates["instruction"],
            incontext=tuple(render_example(ex, self.schema, attrs, self.templates) for ex in self.examples),
            attribute_description=render_attribute_description(self.schema, attrs, self.templates),
            dk_text=self.dk_text,
            question=self.templates["question"],
            query=render_query(query, self.schema, attrs, self.templates),
            incontext_uids=tuple(ex.uid for ex in self.examples),
            query_uid=query.uid,
            templates=self.templates,
        )
