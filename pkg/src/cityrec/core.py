"""Shared domain types: identifier interning, check-ins, interaction sets,
local-time arithmetic and spherical geometry."""
from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateMidpointError, InvalidInputError

EARTH_RADIUS_KM = 6371.0
SECONDS_PER_DAY = 86400
MIN_TZ_OFFSET = -720
MAX_TZ_OFFSET = 840


class Interner:
    """Maps raw string identifiers to dense integer handles in first-seen order."""

    def __init__(self, strings: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._strings: list[str] = []
        for s in strings:
            self.intern(s)

    def intern(self, s: str) -> int:
        idx = self._ids.get(s)
        if idx is None:
            idx = len(self._strings)
            self._ids[s] = idx
            self._strings.append(s)
        return idx

    def id_of(self, s: str) -> int:
        return self._ids[s]

    def get(self, s: str, default: int | None = None) -> int | None:
        return self._ids.get(s, default)

    def string_of(self, idx: int) -> str:
        return self._strings[idx]

    def strings(self) -> list[str]:
        return list(self._strings)

    def __contains__(self, s: object) -> bool:
        return s in self._ids

    def __len__(self) -> int:
        return len(self._strings)

    def __iter__(self) -> Iterator[str]:
        return iter(self._strings)


# -- geometry -----------------------------------------------------------------


def _normalize_lon(lon: float) -> float:
    # into (-180, 180]
    lon = math.fmod(lon, 360.0)
    if lon > 180.0:
        lon -= 360.0
    elif lon <= -180.0:
        lon += 360.0
    return lon


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidInputError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise InvalidInputError(f"latitude {lat} outside [-90, 90]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", _normalize_lon(lon))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in kilometres on a sphere of radius 6371 km."""
    for p in (a, b):
        if not (math.isfinite(p.lat) and math.isfinite(p.lon)):
            raise InvalidInputError(f"non-finite coordinate {p}")
    return float(haversine_km_array(a.lat, a.lon, b.lat, b.lon))


def haversine_km_array(lat1, lon1, lat2, lon2, radius: float = EARTH_RADIUS_KM):
    """Vectorised haversine; arguments broadcast like numpy arrays (degrees)."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=np.float64)) for x in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def _to_unit_vectors(lat, lon) -> np.ndarray:
    phi = np.radians(np.asarray(lat, dtype=np.float64))
    lam = np.radians(np.asarray(lon, dtype=np.float64))
    return np.stack([np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi)], axis=-1)


def midpoint_arrays(lat: np.ndarray, lon: np.ndarray) -> tuple[float, float]:
    """Spherical centroid of coordinate arrays; see :func:`geographic_midpoint`."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if lat.size == 0:
        raise InvalidInputError("midpoint of an empty point set")
    if lat.size == 1:
        return float(lat[0]), _normalize_lon(float(lon[0]))
    v = _to_unit_vectors(lat, lon).mean(axis=0)
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise DegenerateMidpointError("points average to the centre of the sphere")
    x, y, z = v / norm
    return math.degrees(math.atan2(z, math.hypot(x, y))), _normalize_lon(math.degrees(math.atan2(y, x)))


def geographic_midpoint(points: Sequence[GeoPoint]) -> GeoPoint:
    """Mean of the points' 3-D unit vectors, projected back onto the sphere.

    Raises :class:`DegenerateMidpointError` when the mean vector vanishes
    (e.g. two antipodal points).
    """
    if len(points) == 0:
        raise InvalidInputError("midpoint of an empty point set")
    if len(points) == 1:
        return points[0]
    lat, lon = midpoint_arrays([p.lat for p in points], [p.lon for p in points])
    return GeoPoint(lat, lon)


# -- check-ins and time ---------------------------------------------------------


@dataclass(frozen=True)
class CheckIn:
    user: int
    venue: int
    utc_time: int
    tz_offset_min: int

    def __post_init__(self):
        if not MIN_TZ_OFFSET <= self.tz_offset_min <= MAX_TZ_OFFSET:
            raise InvalidInputError(f"timezone offset {self.tz_offset_min} outside [-720, 840]")


def local_time(c: CheckIn) -> int:
    """Local timestamp: UTC seconds shifted by the check-in's own offset."""
    return c.utc_time + 60 * c.tz_offset_min


def local_day(t) -> np.ndarray | int:
    """Days since 1970-01-01 for (local) timestamps; floor semantics for negatives."""
    return np.floor_divide(t, SECONDS_PER_DAY)


def day_number(d: _dt.date) -> int:
    return (d - _dt.date(1970, 1, 1)).days


def local_date(t: int) -> _dt.date:
    return _dt.date(1970, 1, 1) + _dt.timedelta(days=int(local_day(t)))


@dataclass(frozen=True)
class VenueRecord:
    venue: int
    location: GeoPoint
    city: int


class CityTable:
    """Venue coordinates and city membership, indexed by VenueId."""

    def __init__(self, lat: np.ndarray, lon: np.ndarray, city: np.ndarray, cities: Interner | None = None):
        self.lat = np.asarray(lat, dtype=np.float64)
        self.lon = np.asarray(lon, dtype=np.float64)
        self.city = np.asarray(city, dtype=np.int64)
        if not (self.lat.shape == self.lon.shape == self.city.shape):
            raise InvalidInputError("lat/lon/city arrays must have equal length")
        self.cities = cities if cities is not None else Interner(str(c) for c in range(int(self.city.max(initial=-1)) + 1))

    @classmethod
    def from_records(cls, records: Sequence[VenueRecord], cities: Interner | None = None) -> CityTable:
        n = max((r.venue for r in records), default=-1) + 1
        lat = np.full(n, np.nan)
        lon = np.full(n, np.nan)
        city = np.full(n, -1, dtype=np.int64)
        for r in records:
            lat[r.venue], lon[r.venue], city[r.venue] = r.location.lat, r.location.lon, r.city
        return cls(lat, lon, city, cities)

    def __len__(self) -> int:
        return len(self.city)

    def location(self, venue: int) -> GeoPoint:
        return GeoPoint(self.lat[venue], self.lon[venue])

    def records(self) -> list[VenueRecord]:
        return [VenueRecord(v, self.location(v), int(self.city[v])) for v in range(len(self)) if self.city[v] >= 0]


# -- interactions ---------------------------------------------------------------


class DateWindow(NamedTuple):
    """Closed range of local calendar dates."""

    start: _dt.date
    end: _dt.date

    def day_range(self) -> tuple[int, int]:
        return day_number(self.start), day_number(self.end)


@dataclass(frozen=True, eq=False)
class InteractionSet:
    """Deduplicated binary user x venue matrix with earliest local timestamps.

    Arrays are kept sorted by (user, venue). ``n_users``/``n_venues`` are the
    sizes of the corpus identifier space, not the number of active rows.
    """

    users: np.ndarray
    venues: np.ndarray
    times: np.ndarray
    n_users: int
    n_venues: int

    @classmethod
    def from_arrays(cls, users, venues, times=None, n_users: int | None = None, n_venues: int | None = None) -> InteractionSet:
        users = np.asarray(users, dtype=np.int64).ravel()
        venues = np.asarray(venues, dtype=np.int64).ravel()
        times = np.zeros(len(users), dtype=np.int64) if times is None else np.asarray(times, dtype=np.int64).ravel()
        if not (len(users) == len(venues) == len(times)):
            raise InvalidInputError("users, venues and times must have equal length")
        n_users = int(users.max(initial=-1)) + 1 if n_users is None else int(n_users)
        n_venues = int(venues.max(initial=-1)) + 1 if n_venues is None else int(n_venues)
        if len(users) and (users.min() < 0 or venues.min() < 0 or users.max() >= n_users or venues.max() >= n_venues):
            raise InvalidInputError("identifier outside the declared id space")
        order = np.lexsort((venues, users))
        users, venues, times = users[order], venues[order], times[order]
        if len(users) > 1:
            dup = (users[1:] == users[:-1]) & (venues[1:] == venues[:-1])
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise InvalidInputError(f"duplicate interaction ({users[k]}, {venues[k]})")
        for a in (users, venues, times):
            a.setflags(write=False)
        return cls(users, venues, times, n_users, n_venues)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], n_users=None, n_venues=None) -> InteractionSet:
        pairs = list(pairs)
        u = [p[0] for p in pairs]
        v = [p[1] for p in pairs]
        return cls.from_arrays(u, v, None, n_users, n_venues)

    @classmethod
    def empty(cls, n_users: int = 0, n_venues: int = 0) -> InteractionSet:
        return cls.from_arrays([], [], [], n_users, n_venues)

    def __len__(self) -> int:
        return len(self.users)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Binary CSR matrix over the full id space (float64 ones)."""
        return sp.csr_matrix(
            (np.ones(len(self), dtype=np.float64), (self.users, self.venues)),
            shape=(self.n_users, self.n_venues),
        )

    @cached_property
    def _csc(self) -> sp.csc_matrix:
        return self.matrix.tocsc()

    def row(self, user: int) -> np.ndarray:
        """Venues of ``user`` (sorted)."""
        m = self.matrix
        if not 0 <= user < self.n_users:
            return np.empty(0, dtype=np.int64)
        return m.indices[m.indptr[user]:m.indptr[user + 1]].astype(np.int64)

    def col(self, venue: int) -> np.ndarray:
        """Users of ``venue`` (sorted)."""
        m = self._csc
        if not 0 <= venue < self.n_venues:
            return np.empty(0, dtype=np.int64)
        return m.indices[m.indptr[venue]:m.indptr[venue + 1]].astype(np.int64)

    @cached_property
    def user_degree(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    @cached_property
    def venue_degree(self) -> np.ndarray:
        return np.bincount(self.venues, minlength=self.n_venues)

    def active_users(self) -> np.ndarray:
        return np.unique(self.users)

    def active_venues(self) -> np.ndarray:
        return np.unique(self.venues)

    def density(self) -> float:
        nu, ni = len(self.active_users()), len(self.active_venues())
        return len(self) / (nu * ni) if nu and ni else 0.0

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.users.tolist(), self.venues.tolist()))

    def select(self, mask: np.ndarray) -> InteractionSet:
        mask = np.asarray(mask, dtype=bool)
        return InteractionSet.from_arrays(self.users[mask], self.venues[mask], self.times[mask], self.n_users, self.n_venues)

    @staticmethod
    def union(parts: Sequence[InteractionSet]) -> InteractionSet:
        """Union of interaction sets sharing one id space; pairs must not overlap."""
        if not parts:
            return InteractionSet.empty()
        return InteractionSet.from_arrays(
            np.concatenate([p.users for p in parts]),
            np.concatenate([p.venues for p in parts]),
            np.concatenate([p.times for p in parts]),
            max(p.n_users for p in parts),
            max(p.n_venues for p in parts),
        )

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.array([self.n_users, self.n_venues], dtype=np.int64).tobytes())
        for a in (self.users, self.venues, self.times):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InteractionSet):
            return NotImplemented
        return (
            self.n_users == other.n_users
            and self.n_venues == other.n_venues
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.venues, other.venues)
            and np.array_equal(self.times, other.times)
        )

    __hash__ = None  # type: ignore[assignment]
