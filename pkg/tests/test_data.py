import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from debiasbench.data import (
    DataError,
    Dataset,
    FeedbackKind,
    Interaction,
    Interactions,
    Source,
    attach_biased,
    fisher_yates,
    make_split,
    split_randomized,
    split_sizes,
    validate_dataset,
)


def randomized_rows(n):
    return Interactions(np.arange(n) % 7, np.arange(n) // 7, np.ones(n), Source.RANDOMIZED)


class TestValidateDataset:
    def test_well_formed(self):
        rows = [Interaction(0, 0, 5.0), Interaction(0, 1, 3.0), Interaction(1, 0, 1.0), Interaction(1, 1, 4.0)]
        ds = Dataset("ok", 2, 2, FeedbackKind.EXPLICIT, 1.0, 5.0, rows)
        assert validate_dataset(ds) == []

    def test_user_at_boundary(self):
        rows = [Interaction(0, 0, 5.0), Interaction(2, 1, 3.0)]
        report = validate_dataset(Dataset("b", 2, 2, FeedbackKind.EXPLICIT, 1.0, 5.0, rows))
        assert [v.kind for v in report] == ["out-of-range"]
        assert report[0].row == 1

    def test_implicit_rating_three(self):
        rows = [Interaction(0, 0, 1.0), Interaction(0, 1, 3.0), Interaction(1, 1, 0.0)]
        report = validate_dataset(Dataset("i", 2, 2, FeedbackKind.IMPLICIT, 0.0, 1.0, rows))
        assert [(v.kind, v.row) for v in report] == [("out-of-scale", 1)]

    def test_duplicate_triple(self):
        rows = [Interaction(0, 0, 1.0), Interaction(0, 0, 2.0)]
        report = validate_dataset(Dataset("d", 1, 1, FeedbackKind.EXPLICIT, 1.0, 5.0, rows))
        assert [v.kind for v in report] == ["duplicate"]

    def test_same_pair_different_source_is_fine(self):
        rows = [Interaction(0, 0, 1.0, Source.BIASED), Interaction(0, 0, 2.0, Source.RANDOMIZED)]
        assert validate_dataset(Dataset("s", 1, 1, FeedbackKind.EXPLICIT, 1.0, 5.0, rows)) == []

    def test_empty(self):
        report = validate_dataset(Dataset("e", 1, 1, FeedbackKind.EXPLICIT, 1.0, 5.0, Interactions.empty()))
        assert [v.kind for v in report] == ["empty"]

    def test_does_not_mutate(self):
        rows = Interactions([0, 5], [0, 0], [1.0, 9.0])
        ds = Dataset("m", 1, 1, FeedbackKind.EXPLICIT, 1.0, 5.0, rows)
        before = (ds.interactions.users.copy(), ds.interactions.ratings.copy())
        validate_dataset(ds)
        np.testing.assert_array_equal(ds.interactions.users, before[0])
        np.testing.assert_array_equal(ds.interactions.ratings, before[1])

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.sampled_from([0.0, 1.0, 2.0])), max_size=30))
    def test_empty_report_means_every_row_valid(self, rows):
        if not rows:
            return
        ds = Dataset("h", 3, 3, FeedbackKind.IMPLICIT, 0.0, 1.0, [Interaction(*r) for r in rows])
        report = validate_dataset(ds)
        by_scan = any(u >= 3 or i >= 3 or r not in (0.0, 1.0) for u, i, r in rows) or len(set((u, i) for u, i, _ in rows)) < len(rows)
        assert (report == []) == (not by_scan)


class TestSplitSizes:
    @pytest.mark.parametrize(
        "n, expected",
        [(100, (5, 5, 90)), (20, (1, 1, 18)), (54_000, (2700, 2700, 48_600)), (30, (2, 2, 26)), (10, (1, 1, 8))],
    )
    def test_round_half_up(self, n, expected):
        assert split_sizes(n, (0.05, 0.05, 0.90)) == expected

    def test_partition_sizes(self):
        d_u, d_v, d_te = split_randomized(randomized_rows(100), seed=3)
        assert (len(d_u), len(d_v), len(d_te)) == (5, 5, 90)

    def test_same_seed_same_partition(self):
        a = split_randomized(randomized_rows(20), seed=11)
        b = split_randomized(randomized_rows(20), seed=11)
        assert all(x == y for x, y in zip(a, b))

    def test_seed_matters(self):
        a = split_randomized(randomized_rows(200), seed=1)
        b = split_randomized(randomized_rows(200), seed=2)
        assert not all(x == y for x, y in zip(a, b))

    def test_no_randomized_data(self):
        with pytest.raises(DataError, match="no randomized data"):
            split_randomized(Interactions.empty())

    def test_rejects_biased_rows(self):
        with pytest.raises(DataError):
            split_randomized(Interactions([0], [0], [1.0], Source.BIASED))

    @pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.5), (0.0, 0.1, 0.9), (0.5, 0.5)])
    def test_bad_ratios(self, ratios):
        with pytest.raises(DataError):
            split_randomized(randomized_rows(10), ratios)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 400), st.integers(0, 2**32 - 1))
    def test_parts_partition_input(self, n, seed):
        rows = randomized_rows(n)
        parts = split_randomized(rows, seed=seed)
        keys = sorted(k for p in parts for k in zip(p.users.tolist(), p.items.tolist()))
        assert keys == sorted(zip(rows.users.tolist(), rows.items.tolist()))
        assert tuple(len(p) for p in parts) == split_sizes(n, (0.05, 0.05, 0.90))


class TestFisherYates:
    def test_is_permutation(self):
        perm = fisher_yates(1000, 5)
        np.testing.assert_array_equal(np.sort(perm), np.arange(1000))

    def test_reference_stream(self):
        # same MT19937 stream, explicit loop written out independently
        import random

        rng = random.Random(42)
        ref = list(range(8))
        for i in range(7, 0, -1):
            j = int(rng.random() * (i + 1))
            ref[i], ref[j] = ref[j], ref[i]
        assert fisher_yates(8, 42).tolist() == ref


class TestAttachBiased:
    def test_assembly(self):
        d_t = Interactions(np.arange(10), np.zeros(10, int), np.ones(10), Source.BIASED)
        parts = split_randomized(randomized_rows(20))
        split = attach_biased(d_t, parts)
        assert len(split.d_t) == 10
        assert (len(split.d_u), len(split.d_v), len(split.d_te)) == (1, 1, 18)

    def test_mixed_source(self):
        d_t = Interactions([0, 1], [0, 0], [1.0, 1.0], [Source.BIASED, Source.RANDOMIZED])
        with pytest.raises(DataError):
            attach_biased(d_t, split_randomized(randomized_rows(20)))

    def test_empty_biased(self):
        with pytest.raises(DataError):
            attach_biased(Interactions.empty(), split_randomized(randomized_rows(20)))


class TestMakeSplit:
    def test_with_randomized(self, explicit_pair):
        biased, randomized = explicit_pair
        split = make_split(biased, randomized, seed=0)
        assert split.has_randomized or len(randomized) * 0.05 < 0.5
        assert split.positive_threshold == 4.0
        assert len(split.d_t) == len(biased)

    def test_without_randomized_holds_out_biased(self, explicit_pair):
        biased, _ = explicit_pair
        split = make_split(biased, None, seed=0)
        assert not split.has_randomized
        assert len(split.d_t) + len(split.d_v) + len(split.d_te) == len(biased)
