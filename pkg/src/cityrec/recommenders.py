"""Recommender family under one contract: ``fit(train)`` then ``score(user, venues)``.

``score`` returns a float array aligned with ``venues``; NaN marks a venue
the model cannot score for that user (it abstains). All models work in the
corpus-wide id space so that one model can be fitted on a merged multi-city
training set and queried for target-city venues.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .core import EARTH_RADIUS_KM, CityTable, InteractionSet, haversine_km_array
from .errors import ConfigError, NumericalError
from .similarity import SET_JACCARD, SimilarityKind

_logger = logging.getLogger(__name__)

CANNOT_SCORE = np.nan


def cannot_score(x) -> np.ndarray | bool:
    return np.isnan(x)


def _lookup(values: np.ndarray, idx: np.ndarray, fill: float) -> np.ndarray:
    """values[idx] with ``fill`` for indices outside the array."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.full(idx.shape, fill, dtype=np.float64)
    ok = (idx >= 0) & (idx < len(values))
    out[ok] = values[idx[ok]]
    return out


class Recommender:
    name = "base"

    train: InteractionSet | None = None

    def fit(self, train: InteractionSet) -> Recommender:
        self.train = train
        return self

    def score(self, user: int, venues) -> np.ndarray:
        raise NotImplementedError

    def score_one(self, user: int, venue: int) -> float:
        return float(self.score(user, np.array([venue]))[0])

    def _check_fitted(self):
        if self.train is None:
            raise RuntimeError(f"{type(self).__name__} used before fit()")

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()})"

    def describe(self) -> str:
        return ""


# -- Random ---------------------------------------------------------------------

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


class RandomRecommender(Recommender):
    """Uniform scores in [0, 1) derived by hashing (seed, user, venue)."""

    name = "Rnd"

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def score(self, user, venues):
        venues = np.atleast_1d(np.asarray(venues, dtype=np.int64))
        with np.errstate(over="ignore"):
            key = _splitmix64(np.array([self.seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
            key = _splitmix64(key ^ np.uint64(user & 0xFFFFFFFFFFFFFFFF))
            h = _splitmix64(key ^ venues.astype(np.uint64))
        return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)

    def describe(self):
        return f"seed={self.seed}"


# -- Popularity -------------------------------------------------------------------


class PopularityRecommender(Recommender):
    """Score = number of distinct training users of the venue."""

    name = "Pop"

    def fit(self, train):
        super().fit(train)
        self.counts = train.venue_degree.astype(np.float64)
        return self

    def score(self, user, venues):
        self._check_fitted()
        return _lookup(self.counts, np.atleast_1d(venues), 0.0)


# -- AvgDis -----------------------------------------------------------------------


class AvgDistanceRecommender(Recommender):
    """Ranks venues by proximity to the spherical midpoint of the user's
    training venues; score is the negated great-circle distance."""

    name = "AvgDis"

    def __init__(self, locations: CityTable, radius: float = EARTH_RADIUS_KM):
        self.locations = locations
        self.radius = radius

    def fit(self, train):
        super().fit(train)
        loc = self.locations
        lat = _lookup(loc.lat, train.venues, np.nan)
        lon = _lookup(loc.lon, train.venues, np.nan)
        ok = np.isfinite(lat) & np.isfinite(lon)
        users = train.users[ok]
        phi, lam = np.radians(lat[ok]), np.radians(lon[ok])
        n = train.n_users
        count = np.bincount(users, minlength=n)
        xyz = np.stack(
            [
                np.bincount(users, np.cos(phi) * np.cos(lam), minlength=n),
                np.bincount(users, np.cos(phi) * np.sin(lam), minlength=n),
                np.bincount(users, np.sin(phi), minlength=n),
            ],
            axis=1,
        )
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = xyz / count[:, None]
            norm = np.linalg.norm(mean, axis=1)
            clat = np.degrees(np.arctan2(mean[:, 2], np.hypot(mean[:, 0], mean[:, 1])))
            clon = np.degrees(np.arctan2(mean[:, 1], mean[:, 0]))
        bad = (count == 0) | (norm < 1e-12)
        clat[bad] = np.nan
        clon[bad] = np.nan
        # single-venue users: the centroid is the venue itself, exactly
        single = count == 1
        if single.any():
            su = users[single[users]]
            clat[su] = lat[ok][single[users]]
            clon[su] = lon[ok][single[users]]
        self.centroid_lat, self.centroid_lon = clat, clon
        return self

    def centroid(self, user: int) -> tuple[float, float] | None:
        self._check_fitted()
        if not 0 <= user < len(self.centroid_lat) or np.isnan(self.centroid_lat[user]):
            return None
        return float(self.centroid_lat[user]), float(self.centroid_lon[user])

    def score(self, user, venues):
        venues = np.atleast_1d(np.asarray(venues, dtype=np.int64))
        c = self.centroid(user)
        if c is None:
            return np.full(venues.shape, CANNOT_SCORE)
        lat = _lookup(self.locations.lat, venues, np.nan)
        lon = _lookup(self.locations.lon, venues, np.nan)
        return -haversine_km_array(c[0], c[1], lat, lon, self.radius)


# -- k-NN -------------------------------------------------------------------------


def top_k_neighbors(ids: np.ndarray, sims: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep positive similarities, best k, ties broken by ascending id."""
    keep = sims > 0
    ids, sims = ids[keep], sims[keep]
    order = np.lexsort((ids, -sims))[:k]
    return ids[order], sims[order]


@dataclass(frozen=True)
class KnnParams:
    similarity: SimilarityKind = SET_JACCARD
    k: int = 100

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"neighbourhood size must be a positive integer, got {self.k}")


class UserKNN(Recommender):
    """User-based k-NN: score(u, i) = sum of sim(u, v) over the k nearest
    neighbours v of u that visited i."""

    name = "UB"

    def __init__(self, k: int = 100, similarity: SimilarityKind = SET_JACCARD):
        self.params = KnnParams(similarity, k)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def fit(self, train):
        super().fit(train)
        self._C = train.matrix
        self._CT = self._C.T.tocsr()
        self._size = train.user_degree
        self._cache = {}
        return self

    def neighbors(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        hit = self._cache.get(user)
        if hit is not None:
            return hit
        if not 0 <= user < self._C.shape[0] or self._size[user] == 0:
            res = (np.empty(0, dtype=np.int64), np.empty(0))
        else:
            row = (self._C[user] @ self._CT).tocsr()
            ids = row.indices.astype(np.int64)
            inter = row.data
            other = ids != user
            ids, inter = ids[other], inter[other]
            sims = self.params.similarity.from_counts(inter, self._size[user], self._size[ids])
            res = top_k_neighbors(ids, sims, self.params.k)
        self._cache[user] = res
        return res

    def score(self, user, venues):
        venues = np.atleast_1d(np.asarray(venues, dtype=np.int64))
        ids, sims = self.neighbors(user)
        if len(ids) == 0:
            return np.full(venues.shape, CANNOT_SCORE)
        agg = np.asarray(self._C[ids].T @ sims).ravel()
        return _lookup(agg, venues, 0.0)

    def describe(self):
        return f"{self.params.similarity.short}, k={self.params.k}"


class ItemKNN(Recommender):
    """Item-based k-NN: score(u, i) = sum of sim(i, j) over the k nearest
    neighbours j of i that u visited."""

    name = "IB"

    def __init__(self, k: int = 100, similarity: SimilarityKind = SET_JACCARD, chunk: int = 2048):
        self.params = KnnParams(similarity, k)
        self.chunk = chunk

    def fit(self, train):
        super().fit(train)
        C = train.matrix
        CT = C.T.tocsr()
        deg = train.venue_degree
        rows, cols, vals = [], [], []
        active = np.flatnonzero(deg > 0)
        for start in range(0, len(active), self.chunk):
            block = active[start:start + self.chunk]
            S = (CT[block] @ C).tocsr()
            for r, i in enumerate(block):
                ids = S.indices[S.indptr[r]:S.indptr[r + 1]].astype(np.int64)
                inter = S.data[S.indptr[r]:S.indptr[r + 1]]
                other = ids != i
                ids, inter = ids[other], inter[other]
                sims = self.params.similarity.from_counts(inter, deg[i], deg[ids])
                nb, s = top_k_neighbors(ids, sims, self.params.k)
                rows.append(np.full(len(nb), i, dtype=np.int64))
                cols.append(nb)
                vals.append(s)
        n = train.n_venues
        if rows:
            W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        else:
            W = sp.csr_matrix((n, n))
        self.W = W
        self._has_neighbors = np.diff(W.indptr) > 0
        return self

    def neighbors(self, venue: int) -> tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        W = self.W
        sl = slice(W.indptr[venue], W.indptr[venue + 1])
        ids, sims = W.indices[sl].astype(np.int64), W.data[sl]
        order = np.lexsort((ids, -sims))
        return ids[order], sims[order]

    def score(self, user, venues):
        self._check_fitted()
        venues = np.atleast_1d(np.asarray(venues, dtype=np.int64))
        profile = self.train.row(user)
        out = np.full(venues.shape, CANNOT_SCORE)
        if len(profile) == 0:
            return out
        x = np.zeros(self.W.shape[1])
        x[profile] = 1.0
        ok = (venues >= 0) & (venues < self.W.shape[0])
        ok[ok] = self._has_neighbors[venues[ok]]
        out[ok] = self.W[venues[ok]] @ x
        return out

    def describe(self):
        return f"{self.params.similarity.short}, k={self.params.k}"


# -- implicit ALS -------------------------------------------------------------------


@dataclass(frozen=True)
class FactorModelParams:
    factors: int = 10
    confidence_alpha: float = 1.0
    lam: float = 0.1
    iterations: int = 20
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        for name in ("confidence_alpha", "lam", "tol"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ConfigError(f"{name} must be finite")
        if self.factors < 1 or self.iterations < 1:
            raise ConfigError("factors and iterations must be >= 1")
        if self.confidence_alpha <= 0:
            raise ConfigError("confidence_alpha must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")


@dataclass
class FactorModel:
    """Fitted factors over the active users/items of the training set.

    ``user_rows[u]`` / ``item_rows[i]`` give the factor row of a global id or -1.
    """

    user_factors: np.ndarray
    item_factors: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray
    n_users: int
    n_venues: int
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.user_rows = np.full(self.n_users, -1, dtype=np.int64)
        self.user_rows[self.user_ids] = np.arange(len(self.user_ids))
        self.item_rows = np.full(self.n_venues, -1, dtype=np.int64)
        self.item_rows[self.item_ids] = np.arange(len(self.item_ids))

    @property
    def factors(self) -> int:
        return self.user_factors.shape[1]

    def compact_matrix(self, train: InteractionSet) -> sp.csr_matrix:
        """Binary matrix of ``train`` in factor-row order (rows/columns of
        the active users/items), as used by :func:`als_objective`."""
        u, i = self.user_rows[train.users], self.item_rows[train.venues]
        if (u < 0).any() or (i < 0).any():
            raise ValueError("training set has users or items unknown to the model")
        return sp.csr_matrix((np.ones(len(train)), (u, i)), shape=(len(self.user_ids), len(self.item_ids)))

    def dump(self, path) -> None:
        """Binary dump: int64 header [n_users, n_venues, n_active_users,
        n_active_items, factors], int64 ids, then row-major float64 factors."""
        header = np.array(
            [self.n_users, self.n_venues, len(self.user_ids), len(self.item_ids), self.factors], dtype="<i8"
        )
        with open(path, "wb") as fh:
            for a in (header, self.user_ids.astype("<i8"), self.item_ids.astype("<i8"),
                      np.ascontiguousarray(self.user_factors, dtype="<f8"),
                      np.ascontiguousarray(self.item_factors, dtype="<f8")):
                fh.write(a.tobytes())

    @classmethod
    def load(cls, path) -> FactorModel:
        raw = open(path, "rb").read()
        nu, nv, au, ai, f = np.frombuffer(raw, "<i8", 5)
        off = 40
        uid = np.frombuffer(raw, "<i8", au, off); off += 8 * au
        iid = np.frombuffer(raw, "<i8", ai, off); off += 8 * ai
        U = np.frombuffer(raw, "<f8", au * f, off).reshape(au, f); off += 8 * au * f
        V = np.frombuffer(raw, "<f8", ai * f, off).reshape(ai, f)
        return cls(U.copy(), V.copy(), uid.copy(), iid.copy(), int(nu), int(nv))


def score_factor(m: FactorModel, user: int, venues) -> np.ndarray:
    """Dot products of the user's row with each venue's row; NaN if unseen."""
    venues = np.atleast_1d(np.asarray(venues, dtype=np.int64))
    out = np.full(venues.shape, CANNOT_SCORE)
    if not 0 <= user < m.n_users or m.user_rows[user] < 0:
        return out
    rows = _lookup(m.item_rows.astype(np.float64), venues, -1).astype(np.int64)
    ok = rows >= 0
    out[ok] = m.item_factors[rows[ok]] @ m.user_factors[m.user_rows[user]]
    return out


def _row_systems(R: sp.csr_matrix, other: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Σ_{j∈r} o_j o_jᵀ and Σ_{j∈r} o_j for the given rows, via zero-padded
    batched matrix products."""
    f = other.shape[1]
    counts = R.indptr[rows + 1] - R.indptr[rows]
    width = max(int(counts.max()), 1) if len(rows) else 1
    P = np.zeros((len(rows), width, f))
    local = np.repeat(np.arange(len(rows)), counts)
    starts = np.repeat(R.indptr[rows], counts)
    offset = np.arange(len(local)) - np.repeat(np.cumsum(counts) - counts, counts)
    P[local, offset] = other[R.indices[starts + offset]]
    return np.matmul(P.transpose(0, 2, 1), P), P.sum(axis=1)


def _solve_rows(R: sp.csr_matrix, other: np.ndarray, alpha: float, lam: float, what: str,
                max_block: int = 4_000_000) -> np.ndarray:
    """Exact weighted least-squares solution for every row of the binary matrix R.

    Row r solves (OᵀO + α O_rᵀO_r + λI) x = (1+α) Σ_{j∈r} o_j. Rows are
    grouped by entry count (powers of two) so padding at most doubles work.
    """
    n, f = R.shape[0], other.shape[1]
    gram = other.T @ other + lam * np.eye(f)
    out = np.empty((n, f))
    counts = np.diff(R.indptr)
    bucket = np.ceil(np.log2(np.maximum(counts, 1))).astype(np.int64)
    for bk in np.unique(bucket):
        members = np.flatnonzero(bucket == bk)
        width = max(int(counts[members].max()), 1)
        step = max(1, max_block // (f * (width + f)))
        for lo in range(0, len(members), step):
            rows = members[lo:lo + step]
            outer, sums = _row_systems(R, other, rows)
            A = gram + alpha * outer
            b = (1.0 + alpha) * sums
            try:
                x = np.linalg.solve(A, b[..., None])[..., 0]
            except np.linalg.LinAlgError:
                x = np.empty_like(b)
                for r in range(len(rows)):
                    try:
                        x[r] = np.linalg.solve(A[r], b[r])
                    except np.linalg.LinAlgError:
                        raise NumericalError(f"singular normal equations for {what} row {rows[r]}") from None
            if not np.all(np.isfinite(x)):
                bad = int(rows[np.flatnonzero(~np.isfinite(x).all(axis=1))[0]])
                raise NumericalError(f"non-finite solution for {what} row {bad}")
            out[rows] = x
    return out


def als_objective(R: sp.csr_matrix, X: np.ndarray, Y: np.ndarray, alpha: float, lam: float) -> float:
    """Σ_ui c_ui (p_ui - x_u·y_i)² + λ(‖X‖² + ‖Y‖²) with c = 1 + α·p for binary p."""
    coo = R.tocoo()
    s = np.einsum("ij,ij->i", X[coo.row], Y[coo.col])
    dense_sq = float(np.sum((X.T @ X) * (Y.T @ Y)))
    observed = float(np.sum((1.0 + alpha) * (1.0 - s) ** 2 - s**2))
    return dense_sq + observed + lam * (float(np.sum(X * X)) + float(np.sum(Y * Y)))


def als_row_gradients(R: sp.csr_matrix, X: np.ndarray, Y: np.ndarray, alpha: float, lam: float) -> np.ndarray:
    """Gradient of :func:`als_objective` with respect to each row of X."""
    gram = Y.T @ Y
    P = sp.csr_matrix(R)
    S = P.multiply(X @ Y.T) if P.nnz else P  # observed predictions
    # Σ_i c_ui (x·y_i) y_i - Σ_i c_ui p_ui y_i  with c_ui = 1 + α p_ui
    term = X @ gram + alpha * (sp.csr_matrix(S) @ Y) - (1.0 + alpha) * (P @ Y)
    return 2.0 * (term + lam * X)


def fit_hkv(train: InteractionSet, params: FactorModelParams, callback=None) -> FactorModel:
    """Implicit-feedback weighted ALS on the binary training matrix.

    Item factors start uniform in [0, 1/sqrt(f)) (seeded); each sweep solves
    all user rows then all item rows exactly. A final user half-step makes the
    returned user rows stationary for the returned item factors. Stops early
    when the relative objective change drops below ``params.tol``.
    """
    if len(train) == 0:
        raise ConfigError("cannot factorise an empty training set")
    uids, uinv = np.unique(train.users, return_inverse=True)
    iids, iinv = np.unique(train.venues, return_inverse=True)
    R = sp.csr_matrix((np.ones(len(train)), (uinv, iinv)), shape=(len(uids), len(iids)))
    RT = R.T.tocsr()
    f, a, lam = params.factors, params.confidence_alpha, params.lam
    rng = np.random.default_rng(params.seed)
    Y = rng.uniform(0.0, 1.0 / np.sqrt(f), size=(len(iids), f))
    X = np.zeros((len(uids), f))
    history: list[float] = []
    for sweep in range(params.iterations):
        X = _solve_rows(R, Y, a, lam, "user")
        Y = _solve_rows(RT, X, a, lam, "item")
        J = als_objective(R, X, Y, a, lam)
        history.append(J)
        if callback is not None:
            callback(sweep, X, Y, J)
        if len(history) > 1 and params.tol > 0:
            prev = history[-2]
            if abs(prev - J) <= params.tol * max(abs(prev), 1e-300):
                break
    X = _solve_rows(R, Y, a, lam, "user")
    history.append(als_objective(R, X, Y, a, lam))
    _logger.debug("hkv: %d sweeps, J=%.6g", len(history) - 1, history[-1])
    return FactorModel(X, Y, uids, iids, train.n_users, train.n_venues, history)


class HKV(Recommender):
    """Implicit matrix factorisation with confidence weights, fitted by ALS."""

    name = "HKV"

    def __init__(self, params: FactorModelParams | None = None, **kw):
        self.params = params if params is not None else FactorModelParams(**kw)
        self.model: FactorModel | None = None

    def fit(self, train):
        super().fit(train)
        self.model = fit_hkv(train, self.params)
        return self

    def score(self, user, venues):
        self._check_fitted()
        return score_factor(self.model, user, venues)

    def describe(self):
        p = self.params
        return f"{p.factors}, {p.confidence_alpha:g}, {p.lam:g}"


# -- PGN hybrid -------------------------------------------------------------------


def normalize_component(scores: np.ndarray, shift: bool = False) -> np.ndarray:
    """Divide by the maximum over the candidate set; NaN -> 0.

    With ``shift`` the scores are first moved to [0, max - min] (needed for
    negative scores such as negated distances).
    """
    s = np.asarray(scores, dtype=np.float64)
    out = np.zeros_like(s)
    ok = np.isfinite(s)
    if not ok.any():
        return out
    v = s[ok]
    if shift:
        v = v - v.min()
    m = v.max()
    if m > 0:
        out[ok] = v / m
    return out


def combine_normalized(components: Sequence[tuple[np.ndarray, bool]]) -> np.ndarray:
    return np.sum([normalize_component(s, shift) for s, shift in components], axis=0)


class PGN(Recommender):
    """Sum of max-normalised Pop, UB and AvgDis scores.

    Normalisation is relative to the venues passed to :meth:`score`, which
    should be the user's candidate set.
    """

    name = "PGN"

    def __init__(self, locations: CityTable, k: int = 100, similarity: SimilarityKind = SET_JACCARD):
        self.pop = PopularityRecommender()
        self.ub = UserKNN(k, similarity)
        self.avgdis = AvgDistanceRecommender(locations)

    def fit(self, train):
        super().fit(train)
        for m in (self.pop, self.ub, self.avgdis):
            m.fit(train)
        return self

    def score(self, user, venues):
        venues = np.atleast_1d(np.asarray(venues, dtype=np.int64))
        return combine_normalized([
            (self.pop.score(user, venues), False),
            (self.ub.score(user, venues), False),
            (self.avgdis.score(user, venues), True),
        ])

    def describe(self):
        return f"k={self.ub.params.k}, {self.ub.params.similarity.short}"
