import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from debiasbench.metrics import (
    MetricError,
    RecDistribution,
    auc,
    entropy,
    evaluate,
    gini,
    ndcg_at_k,
    per_user_ndcg,
    rec_distribution,
    rmse,
    topk_order,
)
from debiasbench.models import MfModel


def brute_force_auc(scores, labels):
    """Fraction of positive-negative pairs ordered correctly, ties count 1/2."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


class ScoreTable:
    """Minimal stand-in exposing ``score_matrix``."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)
        self.num_items = self.table.shape[1]

    def score_matrix(self, users, items):
        return self.table[np.ix_(users, items)]


class TestRmse:
    def test_identity(self):
        assert rmse([(1, 1), (2, 2)]) == 0.0

    def test_hand_value(self):
        assert rmse([(1, 2), (3, 5)]) == pytest.approx(math.sqrt(2.5), abs=1e-12)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(0.0, 5.0))
    def test_constant_offset(self, truth, c):
        pred = [t + c for t in truth]
        assert rmse(predicted=pred, true=truth) == pytest.approx(c, abs=1e-9)

    def test_empty(self):
        with pytest.raises(MetricError):
            rmse([])


class TestAuc:
    def test_separated(self):
        assert auc([(0.9, 1), (0.8, 1), (0.1, 0)]) == 1.0

    def test_all_tied(self):
        assert auc(scores=[0.3] * 6, labels=[1, 0, 1, 0, 0, 1]) == 0.5

    def test_hand_value(self):
        assert auc(scores=[0.9, 0.8, 0.7, 0.6], labels=[1, 0, 1, 0]) == 0.75

    @pytest.mark.parametrize("labels", [[1, 1, 1], [0, 0]])
    def test_one_class(self, labels):
        with pytest.raises(MetricError):
            auc(scores=np.zeros(len(labels)), labels=labels)

    def test_matches_brute_force_on_1000_inputs(self):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 1000:
            n = int(rng.integers(2, 201))
            # coarse scores so ties are common
            scores = rng.integers(0, rng.integers(2, 30), size=n).astype(float)
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            assert auc(scores=scores, labels=labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)
            checked += 1

    @given(st.lists(st.tuples(st.floats(-5, 5), st.integers(0, 1)), min_size=2, max_size=40))
    def test_permutation_invariant(self, rows):
        labels = [l for _, l in rows]
        if min(labels) == max(labels):
            return
        a = auc(rows)
        assert auc(list(reversed(rows))) == pytest.approx(a, abs=1e-12)


class TestNdcg:
    def test_ideal_order(self):
        assert ndcg_at_k([3, 2, 1, 0], k=4) == pytest.approx(1.0)

    def test_hand_value(self):
        assert ndcg_at_k([0, 1], k=2) == pytest.approx(1.0 / math.log2(3), abs=1e-9)

    def test_all_zero(self):
        assert ndcg_at_k([0, 0, 0], k=2) == 0.0

    def test_explicit_gain(self):
        # ranked (3, 5): dcg = 7 + 31/log2(3); ideal = 31 + 7/log2(3)
        expected = (7 + 31 / math.log2(3)) / (31 + 7 / math.log2(3))
        assert ndcg_at_k([3, 5], k=2) == pytest.approx(expected, abs=1e-9)

    def test_separate_ideal_multiset(self):
        assert ndcg_at_k([0, 0], ideal=[1, 0], k=2) == 0.0

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.integers(1, 8))
    def test_bounds_and_ideal(self, rel, k):
        v = ndcg_at_k(rel, k=k)
        assert 0.0 <= v <= 1.0 + 1e-12
        ideal = sorted(rel, reverse=True)
        if any(rel):
            assert ndcg_at_k(ideal, k=k) == pytest.approx(1.0)

    def test_per_user_skips_users_without_relevant_items(self):
        users = [0, 0, 1, 1]
        items = [0, 1, 0, 1]
        scores = [0.1, 0.9, 0.5, 0.4]
        rel = [1, 0, 0, 0]
        assert per_user_ndcg(users, items, scores, rel, k=5) == pytest.approx(1.0 / math.log2(3))


class TestGini:
    def test_equal(self):
        assert gini([4, 4, 4]) == 0.0

    def test_hand_value(self):
        assert gini([1, 3]) == pytest.approx(0.25, abs=1e-12)

    def test_bound(self):
        assert gini([0, 0, 1]) == pytest.approx(2 / 3, abs=1e-12)

    def test_unsorted_input(self):
        assert gini([3, 1]) == pytest.approx(0.25, abs=1e-12)

    def test_all_zero(self):
        with pytest.raises(MetricError):
            gini([0, 0])

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=30), st.floats(0.01, 100), st.randoms())
    def test_scale_and_permutation_invariance(self, phi, c, rnd):
        if sum(phi) <= 1e-6:
            return
        g = gini(phi)
        shuffled = list(phi)
        rnd.shuffle(shuffled)
        assert gini([c * x for x in phi]) == pytest.approx(g, abs=1e-9)
        assert gini(shuffled) == pytest.approx(g, abs=1e-9)
        assert 0.0 <= g <= (len(phi) - 1) / len(phi) + 1e-12


class TestEntropy:
    def test_one_hot(self):
        assert entropy([0, 1, 0]) == 0.0

    def test_uniform_four(self):
        assert entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-12)

    def test_hand_value(self):
        assert entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5 * math.log(2), abs=1e-9)
        assert entropy([0.5, 0.25, 0.25]) == pytest.approx(1.0397, abs=1e-4)

    @pytest.mark.parametrize("p", [[0.5, 0.6], [-0.1, 1.1], []])
    def test_invalid(self, p):
        with pytest.raises(MetricError):
            entropy(p)

    @pytest.mark.parametrize("n", range(2, 11))
    def test_maximal_only_at_uniform(self, n):
        rng = np.random.default_rng(n)
        assert entropy(np.full(n, 1.0 / n)) == pytest.approx(math.log(n), abs=1e-12)
        for _ in range(50):
            p = rng.dirichlet(np.ones(n))
            assert entropy(p) < math.log(n)


class TestRecDistribution:
    def test_one_user(self):
        dist = rec_distribution(ScoreTable([[0.1, 0.7, 0.3]]), [0], k=2)
        assert dist.counts.tolist() == [0, 1, 1]

    def test_constant_scores_tie_rule(self):
        dist = rec_distribution(ScoreTable(np.zeros((10, 4))), range(10), k=2)
        assert dist.counts.tolist() == [10, 10, 0, 0]

    def test_candidate_subset(self):
        dist = rec_distribution(ScoreTable([[5, 4, 3, 2]]), [0], candidates=[1, 3], k=1)
        assert dist.items.tolist() == [1, 3] and dist.counts.tolist() == [1, 0]

    def test_counts_total(self):
        rng = np.random.default_rng(0)
        dist = rec_distribution(ScoreTable(rng.normal(size=(30, 12))), range(30), k=5)
        assert dist.counts.sum() == 150

    def test_monotone_transform_invariance(self):
        table = np.random.default_rng(1).normal(size=(20, 8))
        a = rec_distribution(ScoreTable(table), range(20), k=3)
        b = rec_distribution(ScoreTable(np.exp(2 * table) + 7), range(20), k=3)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_empty_users(self):
        with pytest.raises(MetricError):
            rec_distribution(ScoreTable([[1.0]]), [], k=1)

    def test_chunking_does_not_change_counts(self):
        table = np.random.default_rng(2).normal(size=(50, 9))
        a = rec_distribution(ScoreTable(table), range(50), k=4, chunk=7)
        b = rec_distribution(ScoreTable(table), range(50), k=4)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_topk_order_ties_by_index(self):
        assert topk_order(np.array([[1.0, 2.0, 2.0, 0.0]]), 3).tolist() == [[1, 2, 0]]

    def test_gini_and_entropy_from_distribution(self):
        dist = RecDistribution(np.arange(2), np.array([1, 3]), k=1)
        assert dist.gini() == pytest.approx(0.25)
        assert dist.entropy() == pytest.approx(entropy([0.25, 0.75]))


class TestEvaluate:
    def test_metric_ranges(self, explicit_split):
        model = MfModel.init(explicit_split.num_users, explicit_split.num_items, 3, 1.0, 5.0, 3.0, rng=0, scale=0.5)
        values = evaluate(model, explicit_split)
        assert values.rmse >= 0
        assert 0 <= values.ndcg_at_5 <= 1
        assert 0 <= values.gini < 1
        assert 0 <= values.entropy <= math.log(explicit_split.num_items) + 1e-12
        assert math.isnan(values.auc) or 0 <= values.auc <= 1
