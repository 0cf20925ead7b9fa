"""Independent reference computations for the fairness tests (plain Python, no credfair imports)."""

import itertools
from fractions import Fraction

import numpy as np


def tpr_of(pairs):
    pos = [p for p, t in pairs if t == 1]
    return None if not pos else Fraction(sum(pos), len(pos))


def exact_bootstrap_mean(pairs):
    """E[TPR] over all |g|^|g| equally likely resamples, conditioning on at least one positive."""
    values = []
    for draw in itertools.product(pairs, repeat=len(pairs)):
        v = tpr_of(draw)
        if v is not None:
            values.append(v)
    return sum(values) / len(values)


def exhaustive_permutation_p(first, second):
    """Two-sided p-value over every relabelling with the first group's size; undefined splits skipped."""
    pooled = list(first) + list(second)
    observed = abs(tpr_of(first) - tpr_of(second))
    hits = total = 0
    for chosen in itertools.combinations(range(len(pooled)), len(first)):
        a = [pooled[i] for i in chosen]
        b = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        ta, tb = tpr_of(a), tpr_of(b)
        if ta is None or tb is None:
            continue
        total += 1
        hits += abs(ta - tb) >= observed
    return hits / total


def tiny_fixtures(count=20, seed=0):
    """Random (first, second) outcome lists of size 3..6, each with at least one positive."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        groups = []
        for _ in range(2):
            n = int(rng.integers(3, 7))
            truth = rng.integers(0, 2, n)
            truth[0] = 1
            # predictions follow truth with a group-specific hit rate
            hit = rng.uniform(0.1, 0.9)
            pred = np.where(truth == 1, rng.random(n) < hit, rng.random(n) < 0.5).astype(int)
            groups.append([(int(p), int(t)) for p, t in zip(pred, truth)])
        out.append(tuple(groups))
    return out
