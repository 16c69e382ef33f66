"""Training scopes per target city: single-domain, nearest-n and most-popular-n
cities, plus common-user overlap diagnostics."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import CityTable, GeoPoint, InteractionSet, haversine_km, midpoint_arrays
from .errors import ConfigError

SINGLE = "single"
NEAREST = "ncd"
POPULAR = "pcd"


@dataclass(frozen=True)
class Strategy:
    kind: str
    n: int = 0

    def __post_init__(self):
        if self.kind not in (SINGLE, NEAREST, POPULAR):
            raise ConfigError(f"unknown strategy {self.kind!r}")
        if self.kind == SINGLE and self.n != 0:
            raise ConfigError("single-domain strategy takes no n")
        if self.kind != SINGLE and self.n < 1:
            raise ConfigError(f"{self.kind} needs n >= 1")

    @classmethod
    def parse(cls, text: str) -> Strategy:
        t = text.strip().lower()
        if t in ("single", "sd"):
            return cls(SINGLE)
        m = re.fullmatch(r"(ncd|pcd):(\d+)", t)
        if not m:
            raise ConfigError(f"bad strategy {text!r}; expected single, ncd:N or pcd:N")
        return cls(m.group(1), int(m.group(2)))

    @property
    def label(self) -> str:
        return "SD" if self.kind == SINGLE else f"{'N' if self.kind == NEAREST else 'P'}-CD({self.n})"

    def __str__(self):
        return SINGLE if self.kind == SINGLE else f"{self.kind}:{self.n}"


@dataclass(frozen=True)
class CityProfile:
    city: int
    centroid: GeoPoint
    train_checkin_count: int
    train_users: frozenset


def city_profiles(train_by_city: Mapping[int, InteractionSet], venues: CityTable) -> dict[int, CityProfile]:
    """Profiles from each city's training partition; centroid over its training venues."""
    out = {}
    for c in sorted(train_by_city):
        part = train_by_city[c]
        vs = part.active_venues()
        lat, lon = midpoint_arrays(venues.lat[vs], venues.lon[vs])
        out[c] = CityProfile(c, GeoPoint(lat, lon), len(part), frozenset(part.active_users().tolist()))
    return out


def city_distance(a: CityProfile, b: CityProfile) -> float:
    return haversine_km(a.centroid, b.centroid)


def nearest_cities(target: int, profiles: Mapping[int, CityProfile], n: int) -> list[int]:
    if n > len(profiles) - 1 or n < 0:
        raise ConfigError(f"asked for {n} nearest cities but only {len(profiles) - 1} other cities exist")
    t = profiles[target]
    others = sorted((city_distance(t, p), c) for c, p in profiles.items() if c != target)
    return [c for _, c in others[:n]]


def top_popular_cities(profiles: Mapping[int, CityProfile], m: int, exclude: Sequence[int] = ()) -> list[int]:
    if m < 0:
        raise ConfigError("m must be nonnegative")
    ranked = sorted((-p.train_checkin_count, c) for c, p in profiles.items() if c not in exclude)
    if m > len(ranked):
        raise ConfigError(f"asked for {m} popular cities but only {len(ranked)} are available")
    return [c for _, c in ranked[:m]]


@dataclass(frozen=True)
class TrainingScope:
    target: int
    strategy: Strategy
    source_cities: tuple[int, ...]
    merged_train: InteractionSet
    target_train: InteractionSet

    def manifest_lines(self, cities=None) -> list[str]:
        name = (lambda c: cities.string_of(c)) if cities is not None else str
        return [
            f"target={name(self.target)}",
            f"strategy={self.strategy}",
            f"source_cities={','.join(name(c) for c in self.source_cities)}",
            f"merged_users={len(self.merged_train.active_users())}",
            f"merged_venues={len(self.merged_train.active_venues())}",
            f"merged_interactions={len(self.merged_train)}",
            f"target_interactions={len(self.target_train)}",
        ]

    def fingerprint(self) -> str:
        return self.merged_train.fingerprint()


def source_cities(target: int, strategy: Strategy, profiles: Mapping[int, CityProfile]) -> list[int]:
    if strategy.kind == SINGLE:
        return [target]
    if strategy.kind == NEAREST:
        return [target] + nearest_cities(target, profiles, strategy.n)
    return [target] + top_popular_cities(profiles, strategy.n, exclude=(target,))


def build_scope(
    target: int,
    strategy: Strategy,
    partitions: Mapping[int, InteractionSet],
    profiles: Mapping[int, CityProfile],
) -> TrainingScope:
    if target not in partitions:
        raise ConfigError(f"target city {target} has no training partition")
    cities = source_cities(target, strategy, profiles)
    parts = [partitions[c] for c in cities if c in partitions]
    merged = partitions[target] if len(parts) == 1 else InteractionSet.union(parts)
    return TrainingScope(target, strategy, tuple(cities), merged, partitions[target])


def common_users(a: CityProfile | frozenset, b: CityProfile | frozenset) -> float:
    """|U(a) ∩ U(b)| / |U(a) ∪ U(b)|."""
    ua = a.train_users if isinstance(a, CityProfile) else frozenset(a)
    ub = b.train_users if isinstance(b, CityProfile) else frozenset(b)
    union = len(ua | ub)
    return len(ua & ub) / union if union else 0.0


def avg_common_users(target: int, strategy: Strategy, profiles: Mapping[int, CityProfile],
                     users: Mapping[int, frozenset] | None = None) -> float:
    """Mean overlap between the target and each non-target source city.

    ``users`` overrides the per-city user sets (e.g. computed before the split);
    city selection still follows ``profiles``.
    """
    others = [c for c in source_cities(target, strategy, profiles) if c != target]
    if not others:
        return 0.0
    sets = users if users is not None else {c: p.train_users for c, p in profiles.items()}
    return float(np.mean([common_users(sets[target], sets.get(c, frozenset())) for c in others]))


def users_by_city(data: InteractionSet, venues: CityTable) -> dict[int, frozenset]:
    city = venues.city[data.venues]
    return {int(c): frozenset(np.unique(data.users[city == c]).tolist()) for c in np.unique(city)}
