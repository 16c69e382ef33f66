from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cityrec.core import CityTable, InteractionSet
from cityrec.evaluation import rank
from cityrec.recommenders import (
    PGN,
    AvgDistanceRecommender,
    PopularityRecommender,
    RandomRecommender,
    UserKNN,
    combine_normalized,
    normalize_component,
)
from oracles import haversine


def table(points):
    lat, lon = zip(*points)
    return CityTable(np.array(lat), np.array(lon), np.zeros(len(points), dtype=np.int64))


def pairs(*p, n_users=None, n_venues=None):
    u, v = zip(*p)
    return InteractionSet.from_arrays(u, v, n_users=n_users, n_venues=n_venues)


class TestRandom:
    def test_deterministic(self):
        a, b = RandomRecommender(3), RandomRecommender(3)
        v = np.arange(100)
        assert np.array_equal(a.score(5, v), b.score(5, v))
        assert a.score_one(5, 17) == a.score(5, v)[17]

    def test_seeds_differ(self):
        v = np.arange(100)
        r1 = np.argsort(RandomRecommender(1).score(0, v))
        r2 = np.argsort(RandomRecommender(2).score(0, v))
        assert not np.array_equal(r1, r2)

    def test_users_differ(self):
        v = np.arange(100)
        m = RandomRecommender(0)
        assert not np.array_equal(m.score(0, v), m.score(1, v))

    def test_range_and_finite(self):
        s = RandomRecommender(0).score(7, np.arange(10_000))
        assert np.isfinite(s).all() and s.min() >= 0 and s.max() < 1
        # roughly uniform
        assert abs(s.mean() - 0.5) < 0.02

    def test_needs_no_fit(self):
        assert RandomRecommender(0).score(0, [1, 2]).shape == (2,)


class TestPopularity:
    def fitted(self):
        s = pairs((0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 2), n_venues=5)
        return PopularityRecommender().fit(s)

    def test_count_order(self):
        m = self.fitted()
        assert m.score(9, [0, 1, 2]).tolist() == [3.0, 2.0, 1.0]
        assert rank(m, 9, [2, 1, 0], 3).venues.tolist() == [0, 1, 2]

    def test_absent_venue_zero(self):
        m = self.fitted()
        assert m.score(0, [3, 4, 99]).tolist() == [0.0, 0.0, 0.0]

    def test_tie_ascending_id(self):
        m = PopularityRecommender().fit(pairs((0, 3), (1, 3), (0, 1), (1, 1)))
        assert rank(m, 5, [3, 1], 2).venues.tolist() == [1, 3]

    def test_user_independent(self):
        m = self.fitted()
        assert np.array_equal(m.score(0, [0, 1, 2]), m.score(2, [0, 1, 2]))

    @given(st.lists(st.integers(0, 9), min_size=1, max_size=40), st.floats(0.01, 100))
    def test_scaling_invariance(self, venues, c):
        m = PopularityRecommender().fit(InteractionSet.from_pairs(list({(i, v) for i, v in enumerate(venues)})))
        s = m.score(0, np.arange(10))
        assert np.array_equal(np.lexsort((np.arange(10), -s)), np.lexsort((np.arange(10), -c * s)))

    def test_unfitted(self):
        with pytest.raises(RuntimeError):
            PopularityRecommender().score(0, [0])


class TestAvgDis:
    def test_single_venue_user(self):
        pts = [(40.0, -3.0), (40.1, -3.0), (41.0, -3.0), (40.0, -2.5)]
        m = AvgDistanceRecommender(table(pts)).fit(pairs((0, 0), n_venues=4))
        s = m.score(0, [0, 1, 2, 3])
        assert s[0] == 0.0
        for j in (1, 2, 3):
            assert -s[j] == pytest.approx(haversine(*pts[0], *pts[j]), rel=1e-12)
        assert rank(m, 0, [1, 2, 3], 3).venues.tolist() == [1, 3, 2]

    def test_equator_midpoint(self):
        pts = [(0.0, 10.0), (0.0, 30.0), (0.0, 20.0), (0.0, 25.0)]
        m = AvgDistanceRecommender(table(pts)).fit(pairs((0, 0), (0, 1), n_venues=4))
        lat, lon = m.centroid(0)
        assert lat == pytest.approx(0.0, abs=1e-12) and lon == pytest.approx(20.0, abs=1e-12)
        s = m.score(0, [2, 3])
        assert s[0] == pytest.approx(0.0, abs=1e-9) and s[0] > s[1]

    def test_no_training_venues(self):
        m = AvgDistanceRecommender(table([(0, 0), (1, 1)])).fit(pairs((0, 0), n_users=2, n_venues=2))
        assert np.isnan(m.score(1, [0, 1])).all()
        assert np.isnan(m.score(42, [0])).all()
        assert m.centroid(1) is None

    @given(st.lists(st.tuples(st.floats(-60, 60), st.floats(-179, 179)), min_size=3, max_size=12),
           st.floats(0.1, 1e4))
    def test_radius_invariance(self, pts, radius):
        t = table(pts)
        train = pairs((0, 0), (0, 1), n_venues=len(pts))
        a = AvgDistanceRecommender(t).fit(train)
        b = AvgDistanceRecommender(t, radius=radius).fit(train)
        v = np.arange(len(pts))
        ra, rb = rank(a, 0, v, len(pts)), rank(b, 0, v, len(pts))
        assert ra.venues[0] == rb.venues[0] or np.isclose(ra.scores[0], ra.scores[1], rtol=1e-9)


class TestNormalization:
    def test_max_normalized(self):
        assert normalize_component(np.array([2.0, 1.0])).tolist() == [1.0, 0.5]

    def test_nonpositive_max(self):
        assert normalize_component(np.array([0.0, 0.0])).tolist() == [0.0, 0.0]
        assert normalize_component(np.array([-1.0, -2.0])).tolist() == [0.0, 0.0]

    def test_nan_contributes_zero(self):
        assert normalize_component(np.array([np.nan, 2.0, 1.0])).tolist() == [0.0, 1.0, 0.5]
        assert normalize_component(np.array([np.nan, np.nan])).tolist() == [0.0, 0.0]

    def test_shift(self):
        assert normalize_component(np.array([-1.0, -4.0]), shift=True).tolist() == [1.0, 0.0]
        assert normalize_component(np.array([-3.0, -3.0]), shift=True).tolist() == [0.0, 0.0]

    def test_worked_example(self):
        # Pop [2, 1], UB [0.5, 1.0], AvgDis [-1, -4]; AvgDis shifted to [3, 0]
        s = combine_normalized([
            (np.array([2.0, 1.0]), False),
            (np.array([0.5, 1.0]), False),
            (np.array([-1.0, -4.0]), True),
        ])
        assert s.tolist() == [2.5, 1.5]


class TestPGN:
    pts = [(0.0, 0.0), (0.0, 0.01), (0.0, 0.02), (0.0, 0.5), (0.0, 1.0)]

    def test_dominant_venue_scores_three(self):
        # user 0 likes venue 0; neighbours also visited venue 1 (most popular, nearest)
        train = pairs((0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (3, 1), (3, 4), n_venues=5)
        m = PGN(table(self.pts)).fit(train)
        s = m.score(0, [1, 2, 3, 4])
        assert s[0] == pytest.approx(3.0)
        assert (s[1:] < 3.0).all()
        assert rank(m, 0, [1, 2, 3, 4], 1).venues.tolist() == [1]

    def test_pop_only_user(self):
        train = pairs((0, 0), (0, 1), (1, 1), (1, 2), (2, 1), n_users=4, n_venues=5)
        m = PGN(table(self.pts)).fit(train)
        cands = np.arange(5)
        pgn = rank(m, 3, cands, 5)
        pop = rank(PopularityRecommender().fit(train), 3, cands, 5)
        assert pgn.venues.tolist() == pop.venues.tolist()

    def test_always_ranks(self):
        train = pairs((0, 0), n_users=3, n_venues=5)
        m = PGN(table(self.pts)).fit(train)
        assert rank(m, 2, [1, 2], 2) is not None

    def test_bounds(self):
        rng = np.random.default_rng(0)
        u, v = np.nonzero(rng.random((15, 5)) < 0.4)
        m = PGN(table(self.pts), k=3).fit(InteractionSet.from_arrays(u, v, n_users=15, n_venues=5))
        for user in range(15):
            s = m.score(user, np.arange(5))
            assert (s >= 0).all() and (s <= 3).all()

    @given(st.integers(0, 4), st.data())
    def test_component_dominance(self, best, data):
        # random component scores where `best` is the strict argmax of each
        def comp(negative):
            s = np.array(data.draw(st.lists(st.floats(0, 10), min_size=5, max_size=5)))
            s[best] = s.max() + 1.0
            return s - 20 if negative else s

        total = combine_normalized([(comp(False), False), (comp(False), False), (comp(True), True)])
        assert int(np.argmax(total)) == best
        assert total[best] == pytest.approx(3.0)

    def test_describe(self):
        assert PGN(table(self.pts)).describe() == "k=100, SJ"
        assert isinstance(PGN(table(self.pts)).ub, UserKNN)
