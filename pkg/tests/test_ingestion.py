from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from debiasbench.data import DataError, Dataset, FeedbackKind, Interactions, Source, validate_dataset
from debiasbench.ingestion import (
    SYNTHETIC_PRESETS,
    SyntheticConfig,
    generate_synthetic,
    load_coat,
    load_yahoo,
    merge_sources,
    read_canonical,
    split_sources,
    write_canonical,
    write_ground_truth,
)
from debiasbench.metrics import gini


def write_matrix(path, rows):
    path.write_text("\n".join(" ".join(str(x) for x in r) for r in rows) + "\n")


class TestCoat:
    def test_loads_nonzero_entries(self, tmp_path):
        write_matrix(tmp_path / "train.ascii", [[0, 3, 0], [5, 0, 1]])
        write_matrix(tmp_path / "test.ascii", [[2, 0, 0], [0, 0, 4]])
        biased, randomized = load_coat(tmp_path)
        assert (biased.num_users, biased.num_items) == (2, 3)
        assert sorted(zip(biased.interactions.users.tolist(), biased.interactions.items.tolist(),
                          biased.interactions.ratings.tolist())) == [(0, 1, 3.0), (1, 0, 5.0), (1, 2, 1.0)]
        assert randomized.interactions.sources() == [Source.RANDOMIZED] * 2
        assert biased.kind is FeedbackKind.EXPLICIT

    def test_missing_file(self, tmp_path):
        write_matrix(tmp_path / "train.ascii", [[1]])
        with pytest.raises(DataError, match="missing"):
            load_coat(tmp_path)

    def test_ragged(self, tmp_path):
        write_matrix(tmp_path / "train.ascii", [[1, 2], [3]])
        write_matrix(tmp_path / "test.ascii", [[1, 2], [3, 4]])
        with pytest.raises(DataError, match="ragged"):
            load_coat(tmp_path)

    def test_out_of_scale(self, tmp_path):
        write_matrix(tmp_path / "train.ascii", [[7, 2]])
        write_matrix(tmp_path / "test.ascii", [[1, 2]])
        with pytest.raises(DataError, match="0..5"):
            load_coat(tmp_path)

    def test_all_zero(self, tmp_path):
        write_matrix(tmp_path / "train.ascii", [[0, 0]])
        write_matrix(tmp_path / "test.ascii", [[1, 2]])
        with pytest.raises(DataError, match="empty"):
            load_coat(tmp_path)


class TestYahoo:
    def test_densifies_ids(self, tmp_path):
        (tmp_path / "train.txt").write_text("1\t1\t5\n1\t3\t2\n4\t1\t1\n")
        (tmp_path / "test.txt").write_text("4\t3\t4\n")
        biased, randomized = load_yahoo(tmp_path / "train.txt", tmp_path / "test.txt")
        first = biased.interactions[0]
        assert (first.user, first.item, first.rating) == (0, 0, 5.0)
        assert (biased.num_users, biased.num_items) == (2, 2)
        assert biased.user_ids.tolist() == [1, 4]
        assert randomized.interactions[0].user == 1

    def test_duplicate(self, tmp_path):
        (tmp_path / "a.txt").write_text("1\t1\t5\n1\t1\t3\n")
        (tmp_path / "b.txt").write_text("1\t1\t5\n")
        with pytest.raises(DataError, match="duplicate triple"):
            load_yahoo(tmp_path / "a.txt", tmp_path / "b.txt")

    @pytest.mark.parametrize("line", ["1\t1\t6", "1\t1", "a\tb\tc", "1\t1\t0"])
    def test_malformed(self, tmp_path, line):
        (tmp_path / "a.txt").write_text(line + "\n")
        (tmp_path / "b.txt").write_text("1\t1\t5\n")
        with pytest.raises(DataError):
            load_yahoo(tmp_path / "a.txt", tmp_path / "b.txt")


class TestSynthetic:
    def test_exact_sizes_and_valid(self):
        cfg = replace(SYNTHETIC_PRESETS["small"], biased_impressions=3000, randomized_impressions=2000)
        biased, randomized, truth = generate_synthetic(cfg)
        assert (len(biased), len(randomized)) == (3000, 2000)
        assert truth.shape == (cfg.num_users, cfg.num_items)
        assert validate_dataset(biased) == [] and validate_dataset(randomized) == []
        assert biased.kind is FeedbackKind.IMPLICIT

    def test_set_b_shape(self):
        biased, randomized, _ = generate_synthetic(SYNTHETIC_PRESETS["set-b"])
        assert (len(biased), len(randomized)) == (100_000, 218_000)

    def test_no_randomized(self):
        _, randomized, _ = generate_synthetic(replace(SYNTHETIC_PRESETS["small"], randomized_impressions=0))
        assert randomized is None

    def test_deterministic(self):
        a = generate_synthetic(SYNTHETIC_PRESETS["small"])
        b = generate_synthetic(SYNTHETIC_PRESETS["small"])
        assert a[0] == b[0] and a[1] == b[1]
        np.testing.assert_array_equal(a[2], b[2])

    def test_knobs_off_histograms_match(self):
        cfg = SyntheticConfig(num_users=20_000, num_items=20, slots=20, position_decay=1.0, popularity_skew=0.0,
                              biased_impressions=100_000, randomized_impressions=100_000, seed=3)
        biased, randomized, _ = generate_synthetic(cfg)
        table = np.vstack([np.bincount(biased.interactions.items, minlength=20),
                           np.bincount(randomized.interactions.items, minlength=20)])
        _, p, _, _ = stats.chi2_contingency(table)
        assert p > 0.01

    def test_strong_selection_bias_concentrates_impressions(self):
        cfg = replace(SYNTHETIC_PRESETS["small"], popularity_skew=3.0, slots=3)
        biased, randomized, _ = generate_synthetic(cfg)
        g_b = gini(np.bincount(biased.interactions.items, minlength=cfg.num_items))
        g_r = gini(np.bincount(randomized.interactions.items, minlength=cfg.num_items))
        assert g_b > g_r

    def test_position_decay_lowers_purchase_rate(self):
        base = SyntheticConfig(num_users=2000, num_items=30, slots=5, popularity_skew=0.0, purchase_noise=0.0,
                               biased_impressions=20_000, randomized_impressions=1)
        full = generate_synthetic(replace(base, position_decay=1.0))[0].interactions.ratings.mean()
        decayed = generate_synthetic(replace(base, position_decay=0.5))[0].interactions.ratings.mean()
        assert decayed < full

    @pytest.mark.parametrize("field, value", [("slots", 0), ("slots", 999), ("position_decay", 0.0),
                                              ("popularity_skew", -1.0), ("purchase_noise", 0.5),
                                              ("biased_impressions", 10**9)])
    def test_invalid_config(self, field, value):
        with pytest.raises(DataError):
            generate_synthetic(replace(SYNTHETIC_PRESETS["small"], **{field: value}))

    def test_ground_truth_file(self, tmp_path):
        truth = np.array([[0.25, 0.5], [0.75, 1.0]])
        write_ground_truth(truth, tmp_path / "gt.csv")
        lines = (tmp_path / "gt.csv").read_text().splitlines()
        assert lines[0] == "user,item,probability"
        assert lines[3] == "1,0,0.75"


class TestCanonical:
    def test_round_trip(self, tmp_path, explicit_pair):
        merged = merge_sources(*explicit_pair)
        write_canonical(merged, tmp_path / "d.csv")
        back = read_canonical(tmp_path / "d.csv")
        assert back == merged
        b, r = split_sources(back)
        assert b == explicit_pair[0] and r == explicit_pair[1]

    def test_format(self, tmp_path):
        ds = Dataset("f", 2, 2, FeedbackKind.IMPLICIT, 0.0, 1.0, Interactions([0, 1], [1, 0], [1.0, 0.0], Source.BIASED))
        write_canonical(ds, tmp_path / "f.csv")
        raw = (tmp_path / "f.csv").read_bytes()
        assert raw == b"user,item,rating,source\n0,1,1,biased-log\n1,0,0,biased-log\n"

    def test_without_sidecar_infers_metadata(self, tmp_path):
        (tmp_path / "x.csv").write_text("user,item,rating,source\n0,2,1,biased-log\n3,0,0,randomized\n")
        ds = read_canonical(tmp_path / "x.csv")
        assert (ds.num_users, ds.num_items, ds.kind) == (4, 3, FeedbackKind.IMPLICIT)

    def test_raw_ids_round_trip(self, tmp_path):
        (tmp_path / "a.txt").write_text("10\t7\t5\n12\t9\t2\n")
        (tmp_path / "b.txt").write_text("10\t9\t4\n")
        merged = merge_sources(*load_yahoo(tmp_path / "a.txt", tmp_path / "b.txt"))
        write_canonical(merged, tmp_path / "y.csv")
        back = read_canonical(tmp_path / "y.csv")
        assert back.user_ids.tolist() == [10, 12] and back.item_ids.tolist() == [7, 9]

    @pytest.mark.parametrize("text", ["", "u,i,r,s\n", "user,item,rating,source\n", "user,item,rating,source\n0,0,1\n",
                                      "user,item,rating,source\n0,0,1,elsewhere\n"])
    def test_bad_files(self, tmp_path, text):
        (tmp_path / "bad.csv").write_text(text)
        with pytest.raises(DataError):
            read_canonical(tmp_path / "bad.csv")

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.sampled_from([1.0, 2.0, 3.5, 5.0]),
                              st.sampled_from(list(Source))), min_size=1, max_size=40,
                    unique_by=lambda r: (r[0], r[1], r[3])))
    def test_round_trip_property(self, tmp_path_factory, rows):
        path = tmp_path_factory.mktemp("rt") / "p.csv"
        u, i, r, s = zip(*rows)
        ds = Dataset("p", 10, 10, FeedbackKind.EXPLICIT, 1.0, 5.0, Interactions(u, i, r, list(s)))
        write_canonical(ds, path)
        assert read_canonical(path) == ds
