from __future__ import annotations

import numpy as np
import pytest

from cityrec.core import InteractionSet
from cityrec.errors import ConfigError
from cityrec.recommenders import ItemKNN, KnnParams, UserKNN, top_k_neighbors
from cityrec.similarity import SET_COSINE, SET_JACCARD

import oracles


def random_corpus(rng, n_users=None, n_venues=None, density=None):
    nu = n_users or int(rng.integers(2, 31))
    nv = n_venues or int(rng.integers(2, 31))
    d = density or rng.uniform(0.05, 0.4)
    mask = rng.random((nu, nv)) < d
    users, venues = np.nonzero(mask)
    return InteractionSet.from_arrays(users, venues, n_users=nu, n_venues=nv)


def profiles_of(s: InteractionSet) -> dict:
    return {u: set(s.row(u).tolist()) for u in range(s.n_users)}


def assert_scores_match(got, expected):
    for g, e in zip(got.tolist(), expected):
        if e is None:
            assert np.isnan(g)
        else:
            assert g == pytest.approx(e, abs=1e-12)


class TestTopK:
    def test_positive_only_and_ties_by_id(self):
        ids, sims = top_k_neighbors(np.array([5, 3, 9, 1, 2]), np.array([0.5, 0.5, 0.0, 0.7, 0.5]), 3)
        assert ids.tolist() == [1, 2, 3]
        assert sims.tolist() == [0.7, 0.5, 0.5]

    def test_invalid_k(self):
        with pytest.raises(ConfigError):
            KnnParams(SET_JACCARD, 0)
        with pytest.raises(ConfigError):
            UserKNN(k=0)


class TestUserKNN:
    def test_identical_users(self):
        # u0 = u1 = {i0, i1}; u2 = {i2}
        s = InteractionSet.from_pairs([(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)])
        m = UserKNN(k=1).fit(s)
        assert m.score(0, [2]).tolist() == [0.0]
        assert m.score(0, [0, 1]).tolist() == [1.0, 1.0]

    def test_isolated_user_cannot_score(self):
        s = InteractionSet.from_pairs([(0, 0), (1, 1), (2, 1)])
        m = UserKNN().fit(s)
        assert np.isnan(m.score(0, [1])).all()
        assert np.isnan(m.score(5, [1])).all()

    def test_large_k_uses_all_positive_neighbours(self):
        rng = np.random.default_rng(11)
        s = random_corpus(rng, 20, 15, 0.3)
        prof = profiles_of(s)
        m = UserKNN(k=1000).fit(s)
        for u in range(20):
            sims = {v: oracles.jaccard(prof[u], prof[v]) for v in prof if v != u}
            for i in range(15):
                want = sum(x for v, x in sims.items() if x > 0 and i in prof[v])
                got = m.score(u, [i])[0]
                if any(x > 0 for x in sims.values()):
                    assert got == pytest.approx(want, abs=1e-12)

    @pytest.mark.parametrize("sim", [SET_JACCARD, SET_COSINE], ids=["SJ", "SC"])
    @pytest.mark.parametrize("k", [1, 3, 10])
    def test_matches_oracle(self, sim, k):
        rng = np.random.default_rng(k)
        for _ in range(5):
            s = random_corpus(rng)
            prof = profiles_of(s)
            m = UserKNN(k, sim).fit(s)
            venues = list(range(s.n_venues))
            for u in range(s.n_users):
                assert_scores_match(m.score(u, venues), oracles.ub_scores(prof, u, venues, k, sim.kind))


class TestItemKNN:
    def test_identical_columns(self):
        s = InteractionSet.from_pairs([(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)])
        m = ItemKNN(k=5).fit(s)
        ids, sims = m.neighbors(0)
        assert ids.tolist() == [1] and sims.tolist() == [1.0]
        assert m.score(0, [0]).tolist() == [1.0]

    def test_no_neighbours_cannot_score(self):
        s = InteractionSet.from_pairs([(0, 0), (0, 1), (1, 2)])
        m = ItemKNN().fit(s)
        out = m.score(0, [0, 2])
        assert out[0] == 1.0 and np.isnan(out[1])

    def test_empty_profile_cannot_score(self):
        s = InteractionSet.from_pairs([(0, 0), (0, 1)], n_users=2)
        assert np.isnan(ItemKNN().fit(s).score(1, [0, 1])).all()

    @pytest.mark.parametrize("sim", [SET_JACCARD, SET_COSINE], ids=["SJ", "SC"])
    @pytest.mark.parametrize("k", [1, 4, 30])
    def test_matches_oracle(self, sim, k):
        rng = np.random.default_rng(100 + k)
        for _ in range(5):
            s = random_corpus(rng)
            prof = profiles_of(s)
            m = ItemKNN(k, sim, chunk=7).fit(s)
            venues = list(range(s.n_venues))
            for u in range(s.n_users):
                assert_scores_match(m.score(u, venues), oracles.ib_scores(prof, u, venues, k, sim.kind))

    def test_symmetric_matrix_mirrors_user_based(self):
        # with C = Cᵀ the item view equals the user view with roles swapped
        rng = np.random.default_rng(2)
        A = rng.random((12, 12)) < 0.3
        A = A | A.T
        users, venues = np.nonzero(A)
        s = InteractionSet.from_arrays(users, venues, n_users=12, n_venues=12)
        ub = UserKNN(4, SET_COSINE).fit(s)
        ib = ItemKNN(4, SET_COSINE).fit(s)
        for u in range(12):
            for i in range(12):
                a, b = ib.score(u, [i])[0], ub.score(i, [u])[0]
                if not (np.isnan(a) or np.isnan(b)):
                    assert a == pytest.approx(b, abs=1e-12)
