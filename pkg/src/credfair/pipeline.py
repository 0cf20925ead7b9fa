"""Staged experiment runner.

Every stage reads the artifacts of earlier stages from the run directory and
writes its own before the next one starts.  ``manifest.json`` records the
completed stages and a sha256 for every file, so an interrupted run can be
resumed and a finished one is left untouched.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Callable

import numpy as np

from .classifiers import (DISPLAY_NAMES, ImportanceVector, ModelKind, derive_seed, feature_importance,
                          load_model, predict_labels, save_model, train)
from .config import ExperimentConfig
from .data import (Dataset, Encoder, SplitSpec, bundled_dataset_path, load_raw, split)
from .fairness import TESTS, CostWeights, confusion, group_outcomes, metrics
from .knowledge import (PROMPT_INDEX_MAP, SOURCE_KINDS, DkKind, build_domain_knowledge,
                        ensemble_importance, render_dk)
from .llm import ChatRequest, CredentialError, Gateway, PredictionRecord, complete_batch, labels_for_metrics, make_request
from .prompts import ChatMessage, InContextSpec, PromptBuilder, select_incontext
from .selection import SearchResult, SearchSpace, default_space, randomized_search

log = logging.getLogger(__name__)

STAGES = ("ingest", "tune", "train", "importance", "dk", "prompt", "classify", "evaluate", "fairness", "report")
MANIFEST = "manifest.json"
LOCK = ".lock"
_UNTRACKED = {MANIFEST, LOCK}
KIND_ORDER = list(ModelKind)


class RunLocked(RuntimeError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class RunArtifacts:
    run_dir: Path
    stages: tuple[str, ...]
    files: dict[str, str]  # relative path -> sha256

    def path(self, rel: str) -> Path:
        return self.run_dir / rel

    @property
    def complete(self) -> bool:
        return self.stages == STAGES


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    return json.loads(path.read_text())


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def read_manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / MANIFEST
    if not path.exists():
        return {"stages": [], "files": {}}
    return _read_json(path)


def _write_manifest(run_dir: Path, stages: list[str]) -> dict:
    files = {}
    for p in sorted(run_dir.rglob("*")):
        rel = p.relative_to(run_dir).as_posix()
        if p.is_file() and rel not in _UNTRACKED:
            files[rel] = _sha256(p)
    manifest = {"stages": stages, "files": files}
    _write_json(run_dir / MANIFEST, manifest)
    return manifest


def verify_manifest(run_dir: Path) -> list[str]:
    """Paths whose content no longer matches the manifest, or that it does not list."""
    run_dir = Path(run_dir)
    listed = read_manifest(run_dir)["files"]
    problems = [rel for rel, digest in listed.items()
                if not (run_dir / rel).exists() or _sha256(run_dir / rel) != digest]
    for p in run_dir.rglob("*"):
        rel = p.relative_to(run_dir).as_posix()
        if p.is_file() and rel not in _UNTRACKED and rel not in listed:
            problems.append(rel)
    return sorted(problems)


@contextmanager
def _run_lock(run_dir: Path):
    path = run_dir / LOCK
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLocked(f"{run_dir} is in use by another process (remove {path} if it is stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def new_run_dir(output_dir: str | Path) -> Path:
    base = Path(output_dir)
    base.mkdir(parents=True, exist_ok=True)
    stem = f"run-{datetime.now():%Y%m%d-%H%M%S}"
    candidate, n = base / stem, 1
    while True:
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            n += 1
            candidate = base / f"{stem}-{n}"


def latest_run_dir(output_dir: str | Path) -> Path:
    runs = sorted(p for p in Path(output_dir).glob("run-*") if p.is_dir())
    if not runs:
        raise FileNotFoundError(f"no run directories under {output_dir}")
    return runs[-1]


def display(kind: ModelKind) -> str:
    return DISPLAY_NAMES[kind]


def required_kinds(cfg: ExperimentConfig) -> list[ModelKind]:
    """Configured models plus any model whose importances a configured prompt needs, in enum order."""
    kinds = set(cfg.model_kinds)
    for i in cfg.prompts.indices:
        kind, source = PROMPT_INDEX_MAP[int(i)]
        if kind is DkKind.NONE:
            continue
        kinds.update(SOURCE_KINDS.values() if source == "Ensemble" else [SOURCE_KINDS[source]])
    return [k for k in KIND_ORDER if k in kinds]


class _Run:
    """Lazily materialised state shared by stages; everything derives from files in ``run_dir``."""

    def __init__(self, cfg: ExperimentConfig, run_dir: Path, transport=None):
        self.cfg = cfg
        self.dir = run_dir
        self.transport = transport
        self._dataset: Dataset | None = None
        self._parts = None

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            path = self.cfg.dataset.path or bundled_dataset_path()
            self._dataset = load_raw(path, self.cfg.dataset.format)
        return self._dataset

    def parts(self):
        """(train Dataset, test Dataset, encoder) as recorded in split.json."""
        if self._parts is None:
            rec = _read_json(self.dir / "split.json")
            pos = {inst.uid: i for i, inst in enumerate(self.dataset)}
            train_ds = self.dataset.subset([pos[u] for u in rec["train_uids"]])
            test_ds = self.dataset.subset([pos[u] for u in rec["test_uids"]])
            self._parts = (train_ds, test_ds, Encoder.fit(train_ds))
        return self._parts

    def matrices(self):
        train_ds, test_ds, enc = self.parts()
        return enc.transform(train_ds), enc.transform(test_ds)

    def backend(self):
        b = self.cfg.backend
        if b.mode != "replay" and not b.cache_path:
            b = replace(b, cache_path=str(self.dir / "cache.jsonl"))
        return b


def _stage_ingest(run: _Run) -> None:
    d = run.cfg.dataset
    ds = run.dataset
    train_ds, test_ds = split(ds, SplitSpec(d.train_fraction, d.split_seed, d.stratified))
    _write_json(run.dir / "split.json", {
        "seed": d.split_seed, "train_fraction": d.train_fraction, "stratified": d.stratified,
        "n_rows": len(ds),
        "train_uids": train_ds.uids, "test_uids": test_ds.uids,
        "test_label_counts": {str(k): int(np.sum(test_ds.labels == k)) for k in (1, 0)},
    })


def _stage_tune(run: _Run) -> None:
    s = run.cfg.search
    train_m, _ = run.matrices()
    for kind in required_kinds(run.cfg):
        override = s.spaces.get(display(kind)) or s.spaces.get(kind.value)
        space = SearchSpace.from_json(override) if override else default_space(kind)
        result = randomized_search(kind, space, train_m, iters=s.iters, k=s.folds, metric=s.metric,
                                   seed=derive_seed(s.seed, KIND_ORDER.index(kind)), n_jobs=s.n_jobs)
        _write_json(run.dir / "search" / f"{display(kind)}.json", result.to_json())


def _stage_train(run: _Run) -> None:
    train_m, _ = run.matrices()
    for kind in required_kinds(run.cfg):
        result = SearchResult.from_json(_read_json(run.dir / "search" / f"{display(kind)}.json"))
        model = train(result.best, train_m, seed=derive_seed(run.cfg.search.seed, KIND_ORDER.index(kind), 1))
        for w in model.warnings:
            log.warning(w)
        (run.dir / "models").mkdir(exist_ok=True)
        save_model(model, run.dir / "models" / f"{display(kind)}.json")


def _stage_importance(run: _Run) -> None:
    out = {}
    for source, kind in SOURCE_KINDS.items():
        path = run.dir / "models" / f"{display(kind)}.json"
        if path.exists():
            out[source] = feature_importance(load_model(path)).to_json()
    if len(out) == len(SOURCE_KINDS):
        out["Ensemble"] = ensemble_importance([ImportanceVector(v) for v in out.values()]).to_json()
    _write_json(run.dir / "importance.json", out)


def _stage_dk(run: _Run) -> None:
    imps = {k: ImportanceVector(v) for k, v in _read_json(run.dir / "importance.json").items()}
    out = {}
    for i in run.cfg.prompts.indices:
        dk = build_domain_knowledge(int(i), imps, run.cfg.prompts.top_k)
        out[str(i)] = {**dk.to_json(), "text": render_dk(dk)}
    _write_json(run.dir / "dk.json", out)


def _stage_prompt(run: _Run) -> None:
    p = run.cfg.prompts
    train_ds, test_ds, _ = run.parts()
    examples = select_incontext(train_ds, InContextSpec(p.incontext_n, seed=p.incontext_seed))
    _write_json(run.dir / "incontext.json", {"uids": [e.uid for e in examples], "seed": p.incontext_seed})
    dks = _read_json(run.dir / "dk.json")
    for i in p.indices:
        builder = PromptBuilder(train_ds.schema, tuple(examples), dks[str(i)]["text"],
                                tuple(p.attribute_subset) if p.attribute_subset else None, p.include_sex)
        rows = []
        for inst in test_ds:
            req = make_request(builder(inst), p.model_id, p.temperature, p.max_tokens, p.token_budget)
            rows.append({"instance_id": inst.uid, "digest": req.digest(), "request": req.payload()})
        _write_jsonl(run.dir / "prompts" / f"prompt-{i}.jsonl", rows)


def _request_from_payload(obj: dict) -> ChatRequest:
    return ChatRequest(tuple(ChatMessage(m["role"], m["content"]) for m in obj["messages"]),
                       obj["model"], obj["temperature"], obj["max_tokens"])


def _stage_classify(run: _Run) -> None:
    cfg = run.backend()
    gateway = Gateway(cfg, transport=run.transport)
    try:
        for i in run.cfg.prompts.indices:
            rows = _read_jsonl(run.dir / "prompts" / f"prompt-{i}.jsonl")
            requests = [_request_from_payload(r["request"]) for r in rows]
            for r, req in zip(rows, requests):
                if req.digest() != r["digest"]:
                    raise ValueError(f"prompt-{i}: stored digest does not match request for {r['instance_id']}")
            records = complete_batch([r["instance_id"] for r in rows], requests, cfg, gateway=gateway)
            _write_jsonl(run.dir / "predictions" / f"prompt-{i}.jsonl", [rec.to_json() for rec in records])
    finally:
        gateway.close()


def _sex_and_labels(run: _Run):
    _, test_ds, _ = run.parts()
    return [inst.uid for inst in test_ds], [inst.sex for inst in test_ds], [int(inst.label) for inst in test_ds]


def prompt_meta(i: int) -> tuple[str, str]:
    kind, source = PROMPT_INDEX_MAP[int(i)]
    return kind.label, "-" if kind is DkKind.NONE else source


def _stage_evaluate(run: _Run) -> None:
    uids, sexes, labels = _sex_and_labels(run)
    _, test_m = run.matrices()
    weights = CostWeights()
    classical, prompts, preds_out = [], [], {}
    for kind in run.cfg.model_kinds:
        model = load_model(run.dir / "models" / f"{display(kind)}.json")
        preds = predict_labels(model, test_m.rows).tolist()
        preds_out[display(kind)] = preds
        classical.append({"model": display(kind), "kind": kind.value,
                          "metrics": metrics(confusion(preds, labels), weights).to_json()})
    _write_json(run.dir / "predictions" / "classical.json", {"instance_ids": uids, "predictions": preds_out})
    by_uid = {u: k for k, u in enumerate(uids)}
    for i in run.cfg.prompts.indices:
        records = [PredictionRecord.from_json(r) for r in _read_jsonl(run.dir / "predictions" / f"prompt-{i}.jsonl")]
        kept, plabels = labels_for_metrics(records, run.cfg.prompts.unparseable_policy)
        truth = [labels[by_uid[records[k].instance_id]] for k in kept]
        dk_type, source = prompt_meta(i)
        prompts.append({"model": f"prompt-{i}", "index": int(i), "dk_type": dk_type, "ml_model": source,
                        "n_scored": len(kept), "n_unparseable": sum(r.unparseable for r in records),
                        "policy": run.cfg.prompts.unparseable_policy,
                        "metrics": metrics(confusion(plabels, truth), weights).to_json()})
    _write_json(run.dir / "metrics.json", {"classical": classical, "prompts": prompts})


def _stage_fairness(run: _Run) -> None:
    f = run.cfg.fairness
    uids, sexes, labels = _sex_and_labels(run)
    by_uid = {u: k for k, u in enumerate(uids)}
    test = TESTS[f.test]
    entries = []

    def assess(name: str, preds, truth, groups):
        gm = group_outcomes(preds, truth, groups, "Male")
        gf = group_outcomes(preds, truth, groups, "Female")
        try:
            res = test(gm, gf, n_resamples=f.n_resamples, alpha=f.alpha, seed=f.seed)
        except ValueError as exc:
            entries.append({"clf": name, "error": str(exc)})
            return
        entries.append({"clf": name, **res.to_json()})

    classical = _read_json(run.dir / "predictions" / "classical.json")["predictions"]
    for kind in run.cfg.model_kinds:
        assess(display(kind), classical[display(kind)], labels, sexes)
    for i in run.cfg.prompts.indices:
        records = [PredictionRecord.from_json(r) for r in _read_jsonl(run.dir / "predictions" / f"prompt-{i}.jsonl")]
        kept, plabels = labels_for_metrics(records, run.cfg.prompts.unparseable_policy)
        rows = [by_uid[records[k].instance_id] for k in kept]
        assess(f"prompt-{i}", plabels, [labels[r] for r in rows], [sexes[r] for r in rows])
    _write_json(run.dir / "fairness.json", {"test": f.test, "alpha": f.alpha, "n_resamples": f.n_resamples,
                                             "seed": f.seed, "results": entries})


def _stage_report(run: _Run) -> None:
    from .report import emit_report
    emit_report(run.dir)


STAGE_FUNCS: dict[str, Callable[[_Run], None]] = {
    "ingest": _stage_ingest, "tune": _stage_tune, "train": _stage_train, "importance": _stage_importance,
    "dk": _stage_dk, "prompt": _stage_prompt, "classify": _stage_classify, "evaluate": _stage_evaluate,
    "fairness": _stage_fairness, "report": _stage_report,
}


def run_experiment(cfg: ExperimentConfig | None = None, run_dir: str | Path | None = None, resume: bool = False,
                   until: str = "report", transport=None) -> RunArtifacts:
    """Run stages up to and including ``until``.

    Without ``resume`` a fresh timestamped directory is created under
    ``cfg.output_dir``.  With ``resume`` the stored config in ``run_dir`` is
    authoritative and stages already in the manifest are skipped; a finished
    run is not touched at all.
    """
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}; expected one of {STAGES}")
    if resume:
        if run_dir is None:
            if cfg is None:
                raise ValueError("resume needs a run directory or a config naming the output directory")
            run_dir = latest_run_dir(cfg.output_dir)
        run_dir = Path(run_dir)
        stored = ExperimentConfig.from_json(_read_json(run_dir / "config.json"))
        if cfg is not None and cfg.to_json() != stored.to_json():
            log.warning("resuming %s with its stored config; command-line settings are ignored", run_dir)
        cfg = stored
    else:
        cfg = (cfg or ExperimentConfig()).validate()
        if cfg.backend.mode == "http" and not os.environ.get(cfg.backend.credential_env):
            raise CredentialError(f"http backend needs {cfg.backend.credential_env} in the environment")
        run_dir = Path(run_dir) if run_dir is not None else new_run_dir(cfg.output_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        if read_manifest(run_dir)["stages"]:
            raise FileExistsError(f"{run_dir} already holds a run; pass resume=True to continue it")
        _write_json(run_dir / "config.json", cfg.to_json())

    wanted = STAGES[: STAGES.index(until) + 1]
    done = list(read_manifest(run_dir)["stages"])
    todo = [s for s in wanted if s not in done]
    if not todo:
        log.info("%s: nothing to do", run_dir)
        m = read_manifest(run_dir)
        return RunArtifacts(run_dir, tuple(m["stages"]), dict(m["files"]))

    with _run_lock(run_dir):
        run = _Run(cfg, run_dir, transport)
        for stage in todo:
            missing = [s for s in STAGES[: STAGES.index(stage)] if s not in done]
            if missing:
                raise StageError(stage, RuntimeError(f"earlier stages not completed: {missing}"))
            log.info("stage %s", stage)
            try:
                STAGE_FUNCS[stage](run)
            except Exception as exc:
                _write_manifest(run_dir, done)
                raise StageError(stage, exc) from exc
            done.append(stage)
            _write_manifest(run_dir, done)
    m = read_manifest(run_dir)
    return RunArtifacts(run_dir, tuple(m["stages"]), dict(m["files"]))
