from __future__ import annotations

import datetime as dt
import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cityrec.core import CityTable, DateWindow, InteractionSet, day_number
from cityrec.errors import ConfigError, DataError
from cityrec.ingest import (
    DEFAULT_TEST_WINDOW,
    DEFAULT_TRAIN_WINDOW,
    corpus_stats,
    deduplicate,
    interactions_to_text,
    k_core,
    parse_corpus,
    partition_by_city,
    preprocess,
    temporal_split,
)

from oracles import k_core_one_at_a_time

VENUES = ["v1\t41.0\t29.0\tIST", "v2\t41.1\t29.1\tIST", "v3\t35.6\t139.7\tTOK"]


def _noon(d: dt.date) -> int:
    return day_number(d) * 86400 + 12 * 3600


class TestParse:
    def test_clean_input(self):
        checkins = ["u1\tv1\t1000\t0", "u2\tv2\t2000\t60", "u1\tv2\t3000\t-300"]
        c = parse_corpus(checkins, VENUES[:2])
        assert len(c) == 3
        assert c.report.rejected == []
        assert c.users.strings() == ["u1", "u2"]
        assert c.cities.strings() == ["IST"]

    def test_unknown_venue(self):
        c = parse_corpus(["u1\tv9\t1000\t0", "u1\tv1\t1000\t0"], VENUES)
        assert len(c) == 1
        (rej,) = c.report.rejected
        assert rej.reason == "unknown venue" and "v9" in rej.text and rej.line_no == 1

    @pytest.mark.parametrize(
        "line",
        ["u1\tv1\t1000\tabc", "u1\tv1\tnot-a-time\t0", "u1\tv1\t1000", "u1\tv1\t1000\t900", "\tv1\t1000\t0"],
    )
    def test_bad_field(self, line):
        c = parse_corpus([line], VENUES)
        assert len(c) == 0
        assert [r.reason for r in c.report.rejected] == ["bad field"]

    def test_literal_time_format(self):
        c = parse_corpus(["u1\tv1\tTue Apr 03 18:00:09 +0000 2012\t180"], VENUES)
        assert c.utc_time.tolist() == [int(dt.datetime(2012, 4, 3, 18, 0, 9, tzinfo=dt.timezone.utc).timestamp())]
        assert c.local_times().tolist() == [c.utc_time[0] + 10800]

    def test_comments_and_blank_lines(self):
        c = parse_corpus(["# header", "", "u1\tv1\t5\t0"], ["# v", *VENUES])
        assert len(c) == 1 and c.report.checkin_lines == 1 and c.report.venue_lines == 3

    def test_bad_venue_lines(self):
        c = parse_corpus([], ["v1\t95\t0\tX", "v2\t1\t2", "v3\t1\t2\tX", "v3\t1\t2\tY", "v4\t1\t2\tZ\textra"])
        assert sorted(c.report.reasons().items()) == [("bad field", 2), ("duplicate venue", 1)]
        assert c.venue_ids.strings() == ["v3", "v4"]

    def test_reads_paths_and_files(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("u1\tv1\t1\t0\n", encoding="utf-8")
        c = parse_corpus(p, io.StringIO("\n".join(VENUES)))
        assert len(c) == 1

    def test_unreadable_path(self, tmp_path):
        with pytest.raises(OSError):
            parse_corpus(tmp_path / "missing.tsv", VENUES)


class TestDeduplicate:
    def test_keeps_earliest(self):
        c = parse_corpus(["u1\tv1\t100\t0", "u1\tv1\t50\t0", "u1\tv1\t200\t0"], VENUES)
        d = deduplicate(c)
        assert d.pairs() == {(0, 0)} and d.times.tolist() == [50]

    def test_earliest_by_local_time(self):
        # 100 UTC at +60 min is later locally than 3000 UTC at -60 min
        c = parse_corpus(["u1\tv1\t100\t60", "u1\tv1\t3000\t-60"], VENUES)
        assert deduplicate(c).times.tolist() == [3000 - 3600]

    def test_identity_when_unique(self):
        c = parse_corpus(["u1\tv1\t1\t0", "u2\tv1\t2\t0", "u1\tv2\t3\t0"], VENUES)
        d = deduplicate(c)
        assert len(d) == 3
        assert deduplicate(d) is d

    def test_shared_venue(self):
        c = parse_corpus(["u1\tv1\t1\t0", "u2\tv1\t2\t0"], VENUES)
        assert len(deduplicate(c)) == 2


def _set(pairs):
    us = {u: i for i, u in enumerate(sorted({u for u, _ in pairs}))}
    vs = {v: i for i, v in enumerate(sorted({v for _, v in pairs}))}
    return InteractionSet.from_pairs([(us[u], vs[v]) for u, v in pairs]), us, vs


class TestKCore:
    def test_already_core(self):
        s = InteractionSet.from_pairs([(0, 0), (0, 1), (1, 0), (1, 1)])
        assert k_core(s, 2) == s

    def test_cascade(self):
        pairs = [("u1", "i1"), ("u2", "i1"), ("u2", "i2"), ("u3", "i2"), ("u3", "i3"), ("u3", "i4"),
                 ("u4", "i3"), ("u4", "i4")]
        s, us, vs = _set(pairs)
        out = k_core(s, 2)
        assert out.pairs() == {(us["u3"], vs["i3"]), (us["u3"], vs["i4"]), (us["u4"], vs["i3"]), (us["u4"], vs["i4"])}

    def test_k1_is_identity(self):
        s = InteractionSet.from_pairs([(0, 0), (1, 2)])
        assert k_core(s, 1) == s

    def test_invalid_k(self):
        with pytest.raises(ConfigError):
            k_core(InteractionSet.empty(), 0)

    @given(st.sets(st.tuples(st.integers(0, 12), st.integers(0, 12)), max_size=60), st.integers(1, 4))
    def test_matches_oracle_and_is_idempotent(self, pairs, k):
        s = InteractionSet.from_pairs(sorted(pairs), 13, 13)
        out = k_core(s, k)
        assert out.pairs() == k_core_one_at_a_time(pairs, k)
        assert k_core(out, k) == out
        if len(out):
            assert out.user_degree[out.active_users()].min() >= k
            assert out.venue_degree[out.active_venues()].min() >= k


class TestTemporalSplit:
    def test_default_windows(self):
        days = [dt.date(2012, 5, 1), dt.date(2012, 10, 31), dt.date(2012, 11, 1), dt.date(2012, 12, 5)]
        s = InteractionSet.from_arrays([0, 1, 2, 3], [0, 0, 0, 0], [_noon(d) for d in days])
        sp = temporal_split(s, DEFAULT_TRAIN_WINDOW, DEFAULT_TEST_WINDOW)
        assert sp.train.users.tolist() == [0, 1]
        assert sp.test.users.tolist() == [2]
        assert sp.discarded.users.tolist() == [3]

    def test_empty(self):
        sp = temporal_split(InteractionSet.empty(), DEFAULT_TRAIN_WINDOW, DEFAULT_TEST_WINDOW)
        assert len(sp.train) == len(sp.test) == len(sp.discarded) == 0

    def test_local_date_decides(self):
        # 2012-11-01 02:00 UTC at -300 min is 2012-10-31 21:00 locally
        utc = day_number(dt.date(2012, 11, 1)) * 86400 + 2 * 3600
        c = parse_corpus([f"u1\tv1\t{utc}\t-300", f"u1\tv2\t{utc}\t0"], VENUES)
        sp = temporal_split(deduplicate(c), DEFAULT_TRAIN_WINDOW, DEFAULT_TEST_WINDOW)
        assert sp.train.pairs() == {(0, 0)} and sp.test.pairs() == {(0, 1)}

    @pytest.mark.parametrize(
        "train,test",
        [
            (DEFAULT_TRAIN_WINDOW, DateWindow(dt.date(2012, 10, 31), dt.date(2012, 11, 30))),
            (DEFAULT_TEST_WINDOW, DEFAULT_TRAIN_WINDOW),
            (DateWindow(dt.date(2012, 6, 1), dt.date(2012, 5, 1)), DEFAULT_TEST_WINDOW),
        ],
    )
    def test_bad_windows(self, train, test):
        with pytest.raises(ConfigError):
            temporal_split(InteractionSet.empty(), train, test)

    @given(st.lists(st.integers(day_number(dt.date(2012, 3, 1)), day_number(dt.date(2013, 1, 31))), max_size=50))
    def test_partition(self, days):
        s = InteractionSet.from_arrays(np.arange(len(days)), np.zeros(len(days), dtype=int),
                                       np.asarray(days, dtype=np.int64) * 86400 + 7)
        sp = temporal_split(s, DEFAULT_TRAIN_WINDOW, DEFAULT_TEST_WINDOW)
        parts = [sp.train.pairs(), sp.test.pairs(), sp.discarded.pairs()]
        assert set().union(*parts) == s.pairs()
        assert sum(map(len, parts)) == len(s)


class TestPartition:
    def _table(self, cities):
        return CityTable(np.zeros(len(cities)), np.zeros(len(cities)), np.asarray(cities))

    def test_two_cities(self):
        s = InteractionSet.from_pairs([(0, 0), (0, 1)])
        parts = partition_by_city(s, self._table([0, 1]))
        assert parts[0].pairs() == {(0, 0)} and parts[1].pairs() == {(0, 1)}

    def test_single_city(self):
        s = InteractionSet.from_pairs([(0, 0), (1, 1), (1, 0)])
        assert partition_by_city(s, self._table([0, 0]))[0] == s

    def test_missing_city(self):
        with pytest.raises(DataError):
            partition_by_city(InteractionSet.from_pairs([(0, 1)]), self._table([0, -1]))

    def test_counts_sum(self):
        rng = np.random.default_rng(1)
        pairs = {(int(u), int(v)) for u, v in rng.integers(0, 30, size=(200, 2))}
        s = InteractionSet.from_pairs(sorted(pairs), 30, 30)
        parts = partition_by_city(s, self._table(rng.integers(0, 4, 30)))
        assert sum(len(p) for p in parts.values()) == len(s)
        assert InteractionSet.union(list(parts.values())) == s


class TestStats:
    def test_counts(self):
        s = InteractionSet.from_pairs([(0, 0), (0, 1), (1, 1), (1, 2)])
        st_ = corpus_stats(s)
        assert (st_.users, st_.items, st_.checkins) == (2, 3, 4)
        assert st_.density == pytest.approx(0.6667, abs=1e-4)
        assert st_.checkins_per_user == 2.0
        assert st_.checkins_per_item == pytest.approx(1.333, abs=1e-3)

    def test_empty(self):
        st_ = corpus_stats(InteractionSet.empty())
        assert (st_.users, st_.items, st_.checkins, st_.density, st_.checkins_per_user) == (0, 0, 0, 0.0, 0.0)


class TestPreprocess:
    def test_order_and_round_trip(self):
        nov = _noon(dt.date(2012, 11, 5))
        jun = _noon(dt.date(2012, 6, 5))
        lines = [
            f"a\tv1\t{jun}\t0", f"a\tv1\t{nov}\t0", f"a\tv2\t{nov}\t0",
            f"b\tv1\t{jun}\t0", f"b\tv2\t{jun}\t0",
            f"c\tv3\t{jun}\t0",  # removed by the 2-core
        ]
        c = parse_corpus(lines, VENUES)
        p = preprocess(c, DEFAULT_TRAIN_WINDOW, DEFAULT_TEST_WINDOW)
        # the repeat of (a, v1) in November is folded into the June visit
        assert p.split.train.pairs() == {(0, 0), (1, 0), (1, 1)}
        assert p.split.test.pairs() == {(0, 1)}
        assert set(p.train_by_city) == {0}
        again = parse_corpus(interactions_to_text(p.interactions, c).splitlines(), VENUES)
        assert deduplicate(again).times.tolist() == p.interactions.times.tolist()

    def test_rejects_bad_windows_first(self):
        c = parse_corpus([], VENUES)
        with pytest.raises(ConfigError):
            preprocess(c, DEFAULT_TEST_WINDOW, DEFAULT_TRAIN_WINDOW)
