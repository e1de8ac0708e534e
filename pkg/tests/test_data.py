from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latte_rec.data import (
    DataError,
    Dataset,
    Interaction,
    RatingScale,
    build_tensor,
    generate_shifted_population,
    ingest,
    leave_last_out,
    split,
    temporal_split,
    transform_scale,
    write_csv,
)

FIVE = RatingScale.range(5)


def make(rows, scale=FIVE):
    """rows: (user, item, rating, ts)"""
    return Dataset.from_interactions([Interaction(*r) for r in rows], scale)


class TestRatingScale:
    def test_range(self):
        assert FIVE.values == (1, 2, 3, 4, 5)
        assert FIVE.K == 5

    @pytest.mark.parametrize("values", [(1,), (1, 1), (3, 2, 1)])
    def test_invalid(self, values):
        with pytest.raises(ValueError):
            RatingScale(values)

    def test_axis(self):
        np.testing.assert_array_equal(RatingScale((2, 4, 8)).axis([8, 2, 4]), [2, 0, 1])
        with pytest.raises(DataError):
            FIVE.axis([6])


class TestIngest:
    def test_movielens_row(self, tmp_path):
        p = tmp_path / "ratings.dat"
        p.write_text("1::1193::5::978300760\n")
        d = ingest(p, "movielens-dat", FIVE)
        assert d.interactions == [Interaction("1", "1193", 5, 978300760)]

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.dat"
        p.write_text("")
        d = ingest(p, "movielens-dat", FIVE)
        assert (len(d), d.n_users, d.n_items) == (0, 0, 0)

    def test_csv_minimal_mapping(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("user,item,rating,timestamp\nu2,x,3,1\nu1,y,4,2\nu2,y,1,3\nu1,x,5,4\n")
        d = ingest(p, "csv", FIVE)
        assert (d.n_users, d.n_items) == (2, 2)
        assert d.user_ids == ("u2", "u1")
        assert set(d.users.tolist()) == {0, 1}
        assert d.item_index == {"x": 0, "y": 1}
        assert [r.rating for r in d.interactions] == [3, 4, 1, 5]

    def test_malformed_row_names_line(self, tmp_path):
        p = tmp_path / "bad.dat"
        p.write_text("1::2::3::4\n1::2::3\n")
        with pytest.raises(DataError, match="line 2"):
            ingest(p, "movielens-dat", FIVE)

    def test_off_scale_names_value(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("user,item,rating,timestamp\na,b,7,1\n")
        with pytest.raises(DataError, match="rating 7"):
            ingest(p, "csv", FIVE)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(DataError):
            ingest(tmp_path / "x", "parquet", FIVE)

    def test_csv_round_trip(self, tmp_path):
        d = make([("a", "i", 2, 5), ("b", "j", 5, 1)])
        write_csv(d, tmp_path / "out.csv")
        assert ingest(tmp_path / "out.csv", "csv", FIVE).interactions == d.interactions


class TestTemporalSplit:
    def test_last_fraction(self):
        d = make([(f"u{t % 3}", f"i{t}", 3, t) for t in range(1, 11)])
        train, test = temporal_split(d, 0.2)
        assert sorted(test.timestamps.tolist()) == [9, 10]
        assert len(train) == 8

    def test_ties_go_by_row_order(self):
        d = make([("u", f"i{k}", 3, 7) for k in range(4)])
        _, test = temporal_split(d, 0.5)
        assert [r.item for r in test.interactions] == ["i2", "i3"]

    def test_ceil(self):
        d = make([("u", f"i{k}", 3, k) for k in range(7)])
        _, test = temporal_split(d, 0.2)
        assert len(test) == 2

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
    def test_fraction_outside_raises(self, frac):
        d = make([("u", "i", 3, 1)])
        with pytest.raises(DataError):
            temporal_split(d, frac)

    @settings(max_examples=50, deadline=None)
    @given(
        stamps=st.lists(st.integers(0, 20), min_size=1, max_size=40),
        frac=st.floats(0.01, 0.99),
    )
    def test_concatenation_reproduces_multiset(self, stamps, frac):
        d = make([(f"u{k % 4}", f"i{k % 6}", 1 + k % 5, t) for k, t in enumerate(stamps)])
        train, test = temporal_split(d, frac)
        assert Counter(train.interactions) + Counter(test.interactions) == Counter(d.interactions)
        if len(train) and len(test):
            assert train.timestamps.max() <= test.timestamps.min()


class TestLeaveLastOut:
    def test_double_holdout(self):
        train = make([("u", "a", 3, 1), ("u", "b", 3, 2), ("u", "c", 3, 3), ("u", "d", 3, 4)])
        test = make([("u", "b", 4, 5), ("u", "c", 2, 7), ("u", "d", 5, 9)])
        b = leave_last_out(test, train)
        assert [h.timestamp for _, h in b.test_holdout] == [9]
        assert [h.timestamp for _, h in b.validation_holdout] == [7]

    def test_unseen_item_dropped(self):
        train = make([("u", "a", 3, 1), ("v", "a", 4, 2)])
        test = make([("u", "a", 4, 5), ("u", "new", 5, 6), ("v", "a", 2, 7)])
        b = leave_last_out(test, train)
        assert [u for u, _ in b.test_holdout] == ["v"]
        assert [u for u, _ in b.validation_holdout] == ["u"]

    def test_single_test_interaction(self):
        train = make([("u", "a", 3, 1)])
        test = make([("u", "a", 5, 3)])
        b = leave_last_out(test, train)
        assert len(b.test_holdout) == 1 and len(b.validation_holdout) == 0

    def test_empty_test_raises(self):
        train = make([("u", "a", 3, 1)])
        with pytest.raises(DataError):
            leave_last_out(make([]), train)

    def test_histories_fold_in_remaining_test(self):
        train = make([("u", "a", 3, 1), ("u", "b", 3, 2), ("u", "c", 3, 3), ("v", "d", 1, 4)])
        test = make([("u", "a", 5, 5), ("u", "d", 1, 6), ("u", "b", 2, 7)])
        bundle = leave_last_out(test, train)
        ia, ib, ic, idd = (train.item_index[x] for x in "abcd")
        items, axis = bundle.histories("validation")["u"]
        # d (validation pick) hidden; a re-rated 5 supersedes the train rating
        assert dict(zip(items.tolist(), axis.tolist())) == {ia: 4, ib: 2, ic: 2}
        items, axis = bundle.histories("test")["u"]
        assert dict(zip(items.tolist(), axis.tolist())) == {ia: 4, ib: 2, ic: 2, idd: 0}

    def test_unknown_stage(self):
        b = leave_last_out(make([("u", "a", 3, 2)]), make([("u", "a", 3, 1)]))
        with pytest.raises(ValueError):
            b.holdout("train")

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 8), st.integers(1, 5)), min_size=2, max_size=60))
    def test_holdout_invariants(self, rows):
        d = make([(f"u{u}", f"i{i}", r, t) for t, (u, i, r) in enumerate(rows)])
        b = split(d, 0.3)
        for stage in ("validation", "test"):
            hold = b.holdout(stage)
            users = [u for u, _ in hold]
            assert len(users) == len(set(users))
            for _, h in hold:
                assert b.train.item_index[h.item] < b.train.n_items


class TestTransformScale:
    def test_ten_to_five(self):
        ten = RatingScale.range(10)
        d = make([("u", f"i{r}", r, r) for r in range(1, 11)], ten)
        out = transform_scale(d, 5)
        assert out.ratings.tolist() == [1, 1, 2, 2, 3, 3, 4, 4, 5, 5]
        assert out.scale == FIVE

    def test_identity(self):
        d = make([("u", f"i{r}", r, r) for r in range(1, 6)])
        assert transform_scale(d, 5).ratings.tolist() == [1, 2, 3, 4, 5]

    def test_four_to_two(self):
        d = make([("u", f"i{r}", r, r) for r in range(1, 5)], RatingScale.range(4))
        assert transform_scale(d, 2).ratings.tolist() == [1, 1, 2, 2]

    def test_non_divisible_raises(self):
        d = make([("u", "i", 3, 1)])
        with pytest.raises(DataError, match="custom grouping"):
            transform_scale(d, 3)

    @given(st.lists(st.integers(1, 10), min_size=1, max_size=30))
    def test_monotone_and_count_preserving(self, ratings):
        d = make([("u", f"i{k}", r, k) for k, r in enumerate(ratings)], RatingScale.range(10))
        out = transform_scale(d, 5)
        assert len(out) == len(d)
        pairs = sorted(zip(d.ratings.tolist(), out.ratings.tolist()))
        assert all(b1 <= b2 for (_, b1), (_, b2) in zip(pairs, pairs[1:]))


class TestBuildTensor:
    def test_single(self):
        t = build_tensor(make([("u", "i", 3, 1)]))
        assert t.dims == (1, 1, 5)
        assert t.coords.tolist() == [[0, 0, 2]]

    def test_latest_wins(self):
        t = build_tensor(make([("u", "i", 2, 10), ("u", "i", 4, 20)]))
        assert t.coords.tolist() == [[0, 0, 3]]

    def test_latest_wins_regardless_of_row_order(self):
        t = build_tensor(make([("u", "i", 4, 20), ("u", "i", 2, 10)]))
        assert t.coords.tolist() == [[0, 0, 3]]

    def test_empty(self):
        t = build_tensor(make([]))
        assert t.dims == (0, 0, 5) and t.nnz == 0

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(1, 5)), max_size=40))
    def test_entry_count_bounded_by_pairs(self, rows):
        d = make([(f"u{u}", f"i{i}", r, t) for t, (u, i, r) in enumerate(rows)])
        t = build_tensor(d)
        assert t.nnz == len({(u, i) for u, i, _ in rows})
        assert np.all(t.values == 1.0)


class TestShiftedPopulation:
    def test_deterministic(self):
        a = generate_shifted_population(20, 30, 1, seed=3)
        b = generate_shifted_population(20, 30, 1, seed=3)
        assert a.interactions == b.interactions
        assert a.interactions != generate_shifted_population(20, 30, 1, seed=4).interactions

    def test_timestamps_strictly_increasing(self):
        d = generate_shifted_population(10, 20, 1, seed=0)
        assert np.all(np.diff(d.timestamps) > 0)

    @pytest.mark.parametrize("shift", [0, 1, 2])
    def test_cohort_b_is_shifted_and_clipped(self, shift):
        d = generate_shifted_population(40, 50, shift, seed=1)
        a_rates = {(r.user[1:], r.item): r.rating for r in d.interactions if r.user[0] == "a"}
        b_rates = {(r.user[1:], r.item): r.rating for r in d.interactions if r.user[0] == "b"}
        assert a_rates.keys() == b_rates.keys()
        for key, base in a_rates.items():
            assert b_rates[key] == min(base + shift, 5)

    def test_shift_zero_histograms_identical(self):
        d = generate_shifted_population(60, 40, 0, seed=2)
        hist = {c: Counter(r.rating for r in d.interactions if r.user[0] == c) for c in "ab"}
        assert hist["a"] == hist["b"]

    @pytest.mark.parametrize("kwargs", [dict(n_users=5, n_items=10, shift=1), dict(n_users=4, n_items=10, shift=3)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            generate_shifted_population(seed=0, **kwargs)
