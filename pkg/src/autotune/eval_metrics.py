"""Ranking quality (DCG/nDCG), sampling cost and improvement percentages."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np

# (upper bound on normalised displacement, relevance level), checked in order
RELEVANCE_LEVELS = (
    (Fraction(1, 10), 5),
    (Fraction(1, 4), 4),
    (Fraction(11, 20), 3),
    (Fraction(9, 10), 2),
    (Fraction(1), 0),
)


def relevance(rank: int, true_rank: int, n: int) -> int:
    """Five-level relevance of one item from its rank displacement.

    ``d = |rank - true_rank| / (n - 1)``; levels are 5, 4, 3, 2 and 0 for
    ``d`` at most 0.1, 0.25, 0.55, 0.9 and 1. Compared exactly (rationally).
    """
    if n < 2:
        raise ValueError("relevance needs n >= 2")
    d = Fraction(abs(int(rank) - int(true_rank)), n - 1)
    for bound, level in RELEVANCE_LEVELS:
        if d <= bound:
            return level
    return 0


def dcg(relevances: Sequence[float]) -> float:
    if len(relevances) == 0:
        raise ValueError("dcg of an empty list")
    return float(sum((2.0 ** rel - 1.0) / math.log2(i + 2) for i, rel in enumerate(relevances)))


def _check_permutation(r: Sequence[int], n: int) -> None:
    if sorted(int(v) for v in r) != list(range(1, n + 1)):
        raise ValueError("ranks must be a permutation of 1..n")


def ndcg(predicted: Sequence[int], true: Sequence[int]) -> float:
    """nDCG of a predicted ranking against the true ranking.

    ``predicted[i]`` and ``true[i]`` are the 1-based ranks of item ``i``.
    Positions follow the true ranking; the ideal list is all-perfect.
    """
    n = len(true)
    if len(predicted) != n:
        raise ValueError("rankings differ in length")
    if n < 2:
        raise ValueError("nDCG needs at least two items")
    _check_permutation(predicted, n)
    _check_permutation(true, n)
    by_position = sorted(range(n), key=lambda i: true[i])
    rels = [relevance(predicted[i], true[i], n) for i in by_position]
    return dcg(rels) / dcg([5] * n)


def ranks_from_times(times: Sequence[float]) -> list[int]:
    """1-based ranks, fastest first; ties go to the earlier sample."""
    order = sorted(range(len(times)), key=lambda i: (times[i], i))
    ranks = [0] * len(times)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def ndcg_from_times(predicted_times: Sequence[float], true_times: Sequence[float]) -> float:
    return ndcg(ranks_from_times(predicted_times), ranks_from_times(true_times))


def total_cost(n: float, epsilon: float, S: float, R: float = 1.0) -> float:
    """Measurement cost of ``n`` training plus ``n`` test samples and prediction error."""
    if n < 0 or S < 0:
        raise ValueError("n and S must be non-negative")
    return 2 * n + epsilon * S * R


def improvement(et: float, et_baseline: float) -> float:
    """Percent change of ``et`` relative to the baseline; negative is faster."""
    if et_baseline <= 0:
        raise ValueError("baseline execution time must be positive")
    return (et - et_baseline) / et_baseline * 100.0


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    ra = np.asarray(ranks_from_times(a), dtype=float)
    rb = np.asarray(ranks_from_times(b), dtype=float)
    return float(np.corrcoef(ra, rb)[0, 1])
