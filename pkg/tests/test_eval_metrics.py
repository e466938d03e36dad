import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from autotune.eval_metrics import (
    dcg, improvement, ndcg, ndcg_from_times, ranks_from_times, relevance, spearman, total_cost,
)


def ref_relevance(rank, true_rank, n):
    d = abs(rank - true_rank) / (n - 1)
    for bound, level in ((0.1, 5), (0.25, 4), (0.55, 3), (0.9, 2)):
        if d <= bound + 1e-12:
            return level
    return 0


def ref_ndcg(pred, true):
    n = len(true)
    order = sorted(range(n), key=lambda i: true[i])
    gains = [2 ** ref_relevance(pred[i], true[i], n) - 1 for i in order]
    disc = [1 / math.log2(k + 2) for k in range(n)]
    return sum(g * d for g, d in zip(gains, disc)) / sum(31 * d for d in disc)


def test_worked_example():
    # exact log2 discounts: 31 + 31/log2(3) + 31/2 and 7 + 7/log2(3) + 31/2
    assert dcg([5, 5, 5]) == pytest.approx(31 + 31 / math.log2(3) + 15.5, rel=1e-15)
    assert round(dcg([5, 5, 5]), 2) == 66.06
    assert round(dcg([3, 3, 5]), 2) == 26.92
    assert round(ndcg([2, 1, 3], [1, 2, 3]), 2) == 0.41


def test_identity_ranking_is_perfect():
    assert ndcg([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0


@pytest.mark.parametrize("n", range(3, 7))
def test_matches_reference_on_all_permutations(n):
    true = list(range(1, n + 1))
    for perm in itertools.permutations(true):
        assert ndcg(list(perm), true) == pytest.approx(ref_ndcg(perm, true), abs=1e-12)


@given(st.integers(2, 30).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n), st.integers(1, n))))
def test_relevance_is_symmetric(args):
    n, a, b = args
    assert relevance(a, b, n) == relevance(b, a, n)


@pytest.mark.parametrize("delta, level", [(2, 5), (3, 4), (5, 4), (6, 3), (11, 3), (12, 2), (18, 2), (19, 0), (20, 0)])
def test_relevance_bucket_edges_are_exact(delta, level):
    # n = 21 puts d = delta / 20 exactly on each printed threshold
    assert relevance(1 + delta, 1, 21) == level


def test_bad_level_is_zero():
    assert relevance(1, 10, 10) == 0
    assert relevance(1, 11, 11) == 0


def test_rankings_must_be_permutations():
    with pytest.raises(ValueError):
        ndcg([1, 1, 3], [1, 2, 3])
    with pytest.raises(ValueError):
        ndcg([1], [1])


def test_ranks_from_times_breaks_ties_by_order():
    assert ranks_from_times([3.0, 1.0, 3.0, 2.0]) == [3, 1, 4, 2]
    assert ndcg_from_times([1, 2, 3], [10, 20, 30]) == 1.0


def test_total_cost_fixture():
    assert total_cost(10, 0.1, 100, 1) == 30


def test_improvement_sign_convention():
    assert improvement(90, 100) == pytest.approx(-10.0)
    assert improvement(100, 100) == 0.0
    with pytest.raises(ValueError):
        improvement(1, 0)


def test_spearman_of_monotone_transform_is_one():
    x = np.random.default_rng(0).random(20)
    assert spearman(x, np.exp(x)) == pytest.approx(1.0)
