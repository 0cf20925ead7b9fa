"""Cost-weighted confusion metrics and resampling tests for TPR disparity between groups."""

from __future__ import annotations

import itertools
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

N_RESAMPLES = 1000
ALPHA = 0.05
# exhaustive relabelling is used while C(n, n_first) stays below this
EXACT_PERMUTATION_LIMIT = 200_000
MAX_REDRAWS = 100


class UndefinedTPR(ValueError):
    pass


class DegenerateBootstrap(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class CostWeights:
    fp_weight: float = 5.0
    fn_weight: float = 1.0

    def __post_init__(self):
        if self.fp_weight < 0 or self.fn_weight < 0:
            raise ValueError("cost weights must be non-negative")


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    fp_cost: float
    fn_cost: float
    counts: ConfusionCounts
    weights: CostWeights
    degenerate: tuple[str, ...] = ()

    def to_json(self) -> dict:
        out = asdict(self)
        out["degenerate"] = list(self.degenerate)
        return out

    @classmethod
    def from_json(cls, obj) -> "MetricsReport":
        return cls(obj["precision"], obj["recall"], obj["f1"], obj["fp_cost"], obj["fn_cost"],
                   ConfusionCounts(**obj["counts"]), CostWeights(**obj["weights"]), tuple(obj["degenerate"]))


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    if preds.size == 0:
        raise ValueError("cannot score an empty prediction list")
    if not np.isin(labels, (0, 1)).all() or not np.isin(preds, (0, 1)).all():
        raise ValueError("labels and predictions must be 0/1")
    return ConfusionCounts(
        tp=int(np.sum((preds == 1) & (labels == 1))),
        fp=int(np.sum((preds == 1) & (labels == 0))),
        fn=int(np.sum((preds == 0) & (labels == 1))),
        tn=int(np.sum((preds == 0) & (labels == 0))),
    )


def metrics(counts: ConfusionCounts, weights: CostWeights = CostWeights()) -> MetricsReport:
    degenerate = []
    if counts.tp + counts.fp:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if counts.tp + counts.fn:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.append("f1")
    return MetricsReport(
        precision=precision, recall=recall, f1=f1,
        fp_cost=weights.fp_weight * counts.fp, fn_cost=weights.fn_weight * counts.fn,
        counts=counts, weights=weights, degenerate=tuple(degenerate),
    )


@dataclass(frozen=True)
class GroupOutcomes:
    group: str
    pairs: tuple[tuple[int, int], ...]  # (predicted, true)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(p), int(t)) for p, t in self.pairs))

    @property
    def preds(self) -> np.ndarray:
        return np.array([p for p, _ in self.pairs], dtype=np.int64)

    @property
    def truth(self) -> np.ndarray:
        return np.array([t for _, t in self.pairs], dtype=np.int64)


def group_outcomes(preds, labels, groups, name: str) -> GroupOutcomes:
    return GroupOutcomes(name, tuple((int(p), int(t)) for p, t, g in zip(preds, labels, groups) if g == name))


def tpr(g: GroupOutcomes) -> float:
    truth = g.truth
    positives = int(np.sum(truth == 1))
    if positives == 0:
        raise UndefinedTPR(f"group {g.group!r} has no positive-labelled instances")
    return float(np.sum((g.preds == 1) & (truth == 1)) / positives)


@dataclass(frozen=True)
class BootstrapTPR:
    values: np.ndarray
    degenerate_redraws: int


def _tpr_rows(hit, pos, idx):
    positives = pos[idx].sum(axis=1)
    hits = hit[idx].sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return hits / positives, positives


def bootstrap_tpr(g: GroupOutcomes, n_resamples: int = N_RESAMPLES, seed: int = 0, rng=None) -> BootstrapTPR:
    """Resample ``g`` with replacement ``n_resamples`` times and record each TPR.

    Draws without any positive-labelled pair are redrawn (up to MAX_REDRAWS per slot);
    more than half of the slots needing a redraw is an error.
    """
    tpr(g)  # raises if undefined
    rng = np.random.default_rng(seed) if rng is None else rng
    truth, preds = g.truth, g.preds
    pos = (truth == 1).astype(np.int64)
    hit = ((preds == 1) & (truth == 1)).astype(np.int64)
    n = len(truth)
    idx = rng.integers(0, n, size=(n_resamples, n))
    values, positives = _tpr_rows(hit, pos, idx)
    redraws = 0
    empty = np.flatnonzero(positives == 0)
    if len(empty) > 0.5 * n_resamples:
        raise DegenerateBootstrap(
            f"group {g.group!r}: {len(empty)} of {n_resamples} resamples had no positives")
    for slot in empty:
        for _ in range(MAX_REDRAWS):
            redraws += 1
            draw = rng.integers(0, n, size=n)
            if pos[draw].sum() > 0:
                values[slot] = hit[draw].sum() / pos[draw].sum()
                break
        else:
            raise DegenerateBootstrap(f"group {g.group!r}: could not draw a resample with positives")
    return BootstrapTPR(values, redraws)


@dataclass(frozen=True)
class FairnessResult:
    e_tpr_m: float
    e_tpr_f: float
    delta: float
    reject_h0: bool
    ci_low: float
    ci_high: float
    n_resamples: int
    alpha: float
    seed: int
    test: str = "bootstrap"
    p_value: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "FairnessResult":
        return cls(**obj)


def disparity_delta(e_first: float, e_second: float) -> float:
    return e_first - e_second


def _group_rng(seed: int, g: GroupOutcomes):
    # stream keyed by the group's outcomes: swapping argument order reuses the same
    # resamples, and identical outcome lists resample identically
    key = zlib.crc32(np.asarray(g.pairs, dtype=np.int64).tobytes())
    return np.random.default_rng([int(seed), key])


def disparity_test(gm: GroupOutcomes, gf: GroupOutcomes, n_resamples: int = N_RESAMPLES,
                   alpha: float = ALPHA, seed: int = 0) -> FairnessResult:
    """Bootstrap percentile interval on TPR(first) - TPR(second); reject iff 0 lies outside it.

    Each group is resampled from its own stream, derived from ``seed`` and the
    group's outcome list.  Calling with the groups swapped therefore reproduces
    the same resamples, negating ``delta`` and the interval; two identical
    outcome lists give a difference of exactly zero.
    """
    bm = bootstrap_tpr(gm, n_resamples, rng=_group_rng(seed, gm))
    bf = bootstrap_tpr(gf, n_resamples, rng=_group_rng(seed, gf))
    diff = bm.values - bf.values
    ci_low, ci_high = np.percentile(diff, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    e_m, e_f = float(bm.values.mean()), float(bf.values.mean())
    return FairnessResult(
        e_tpr_m=e_m, e_tpr_f=e_f, delta=disparity_delta(e_m, e_f),
        reject_h0=bool(ci_low > 0 or ci_high < 0),
        ci_low=float(ci_low), ci_high=float(ci_high),
        n_resamples=n_resamples, alpha=alpha, seed=seed, test="bootstrap",
        diagnostics={"redraws_first": bm.degenerate_redraws, "redraws_second": bf.degenerate_redraws},
    )


def _tpr_or_nan(hit, pos):
    p = pos.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(p > 0, hit.sum(axis=-1) / np.where(p > 0, p, 1), np.nan)


def permutation_test(gm: GroupOutcomes, gf: GroupOutcomes, n_resamples: int = N_RESAMPLES,
                     alpha: float = ALPHA, seed: int = 0) -> FairnessResult:
    """Two-sided relabelling test of TPR(first) - TPR(second).

    Relabellings are enumerated exhaustively when there are few enough of them,
    otherwise ``n_resamples`` random relabellings are drawn.  Relabellings that
    leave a group without positive-labelled pairs have no defined statistic and
    are excluded from the reference distribution.
    """
    observed = tpr(gm) - tpr(gf)
    pooled = gm.pairs + gf.pairs
    hit = np.array([int(p == 1 and t == 1) for p, t in pooled])
    pos = np.array([int(t == 1) for _, t in pooled])
    n, n_m = len(pooled), len(gm.pairs)
    total = math.comb(n, n_m)
    if total <= EXACT_PERMUTATION_LIMIT:
        masks = np.zeros((total, n), dtype=bool)
        for row, combo in enumerate(itertools.combinations(range(n), n_m)):
            masks[row, list(combo)] = True
        mode = "exact"
    else:
        rng = np.random.default_rng(seed)
        masks = np.zeros((n_resamples, n), dtype=bool)
        for row in range(n_resamples):
            masks[row, rng.permutation(n)[:n_m]] = True
        mode = "monte-carlo"
    stat = _tpr_or_nan(hit * masks, pos * masks) - _tpr_or_nan(hit * ~masks, pos * ~masks)
    stat = stat[~np.isnan(stat)]
    extreme = np.sum(np.abs(stat) >= abs(observed) - 1e-12)
    p_value = float(extreme / len(stat)) if mode == "exact" else float((extreme + 1) / (len(stat) + 1))
    return FairnessResult(
        e_tpr_m=tpr(gm), e_tpr_f=tpr(gf), delta=observed, reject_h0=bool(p_value <= alpha),
        ci_low=float(np.percentile(stat, 100 * alpha / 2)), ci_high=float(np.percentile(stat, 100 * (1 - alpha / 2))),
        n_resamples=len(stat), alpha=alpha, seed=seed, test="permutation", p_value=p_value,
        diagnostics={"mode": mode, "relabellings": int(total), "valid": int(len(stat))},
    )


TESTS = {"bootstrap": disparity_test, "permutation": permutation_test}
