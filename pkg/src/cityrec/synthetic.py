"""Synthetic multi-city check-in corpora with planted structure.

Two nearby cities share a large fraction of their users and a third, distant
and more active city shares almost none. Users and venues belong to taste
groups and venues are scattered over neighbourhoods, so both collaborative and
geographic signal exist. Visitors from the first city behave like tourists in
the second: part of their visits goes to downtown sights, which a purely
geographic model fitted on the home city cannot anticipate.
"""
from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .core import SECONDS_PER_DAY, day_number


@dataclass(frozen=True)
class CitySpec:
    name: str
    lat: float
    lon: float
    tz_offset_min: int
    users: int
    venues: int


@dataclass(frozen=True)
class PlantedSpec:
    """Generator knobs. City ``users`` counts exclude visitors from elsewhere."""

    cities: tuple[CitySpec, ...] = (
        CitySpec("north", 35.00, 139.00, 540, 1100, 400),
        CitySpec("south", 35.30, 139.55, 540, 100, 400),
        CitySpec("far", 55.75, 37.62, 240, 1500, 600),
    )
    # residents of the first city who also visit the second / the last city
    shared_near: int = 360
    shared_far: int = 9
    groups: int = 8
    group_boost: float = 30.0
    neighborhoods: int = 8
    distance_scale_km: float = 2.0
    visitor_roam: float = 0.5
    visitor_scale_km: float = 1.0
    sights_km: float = 1.5
    visits_home: tuple[int, int] = (8, 20)
    visits_away: tuple[int, int] = (3, 8)
    repeat_rate: float = 0.1
    cluster_radius_km: float = 8.0
    cluster_km: float = 2.0
    start: _dt.date = _dt.date(2012, 5, 1)
    end: _dt.date = _dt.date(2012, 11, 30)


def _offset(lat: float, lon: float, dx_km, dy_km):
    dlat = np.asarray(dy_km) / 111.195
    dlon = np.asarray(dx_km) / (111.195 * np.cos(np.radians(lat)))
    return lat + dlat, lon + dlon


def make_planted_corpus(seed: int = 0, spec: PlantedSpec = PlantedSpec()) -> tuple[list[str], list[str]]:
    """Return (check-in lines, venue lines) in the tab-separated input format.

    A resident visit picks venue j with weight popularity_j *
    boost^[same group] * exp(-d(base, j) / distance_scale_km), where the base
    point lies in a random neighbourhood. A visitor uses the same weights
    with ``visitor_scale_km`` around a lodging point, except that with
    probability ``visitor_roam`` the distance term is measured from downtown
    with ``sights_km`` instead.
    """
    rng = np.random.default_rng(seed)
    G = spec.groups
    venue_lines: list[str] = []
    cities = []  # per city: names, group, popularity, xy (km), cluster centres
    for c in spec.cities:
        # a downtown core plus a ring of outer neighbourhoods
        ring = spec.neighborhoods - 1
        angles = np.arange(ring) * 2 * np.pi / ring + rng.uniform(0, 2 * np.pi)
        centers = np.vstack([[0.0, 0.0], spec.cluster_radius_km * np.stack([np.cos(angles), np.sin(angles)], axis=1)])
        hood = rng.integers(0, len(centers), size=c.venues)
        group = rng.integers(0, G, size=c.venues)
        xy = centers[hood] + rng.normal(0.0, spec.cluster_km, size=(c.venues, 2))
        lat, lon = _offset(c.lat, c.lon, xy[:, 0], xy[:, 1])
        names = [f"{c.name}-v{j:04d}" for j in range(c.venues)]
        pop = np.minimum(rng.zipf(1.6, size=c.venues).astype(float), 50.0)
        for j in range(c.venues):
            venue_lines.append(f"{names[j]}\t{lat[j]:.6f}\t{lon[j]:.6f}\t{c.name}")
        cities.append((names, group, pop, xy, centers))

    rosters = [[f"{c.name}-u{j:04d}" for j in range(c.users)] for c in spec.cities]
    n0 = spec.cities[0].users
    near = rng.choice(n0, size=spec.shared_near, replace=False)
    far = rng.choice(np.setdiff1d(np.arange(n0), near), size=spec.shared_far, replace=False)
    user_group = {u: int(rng.integers(0, G)) for roster in rosters for u in roster}
    away = {1: [rosters[0][j] for j in near], len(spec.cities) - 1: [rosters[0][j] for j in far]}

    t0 = day_number(spec.start) * SECONDS_PER_DAY
    t1 = (day_number(spec.end) + 1) * SECONDS_PER_DAY
    lines: list[str] = []

    def visit(user: str, ci: int, n: int, tourist: bool = False):
        c = spec.cities[ci]
        names, group, pop, xy, centers = cities[ci]
        g = user_group[user]
        taste = pop * np.where(group == g, spec.group_boost, 1.0)
        # residents gravitate to their home, visitors to their lodging but
        # also roam to sights that match their taste
        base = centers[rng.integers(len(centers))] + rng.normal(0.0, spec.cluster_km, size=2)
        scale = spec.visitor_scale_km if tourist else spec.distance_scale_km
        near = taste * np.exp(-np.hypot(*(xy - base).T) / scale)
        near /= near.sum()
        roam = taste * np.exp(-np.hypot(xy[:, 0], xy[:, 1]) / spec.sights_km)
        roam /= roam.sum()
        p_roam = spec.visitor_roam if tourist else 0.0
        seen: list[int] = []
        for _ in range(n):
            if seen and rng.random() < spec.repeat_rate:
                j = seen[int(rng.integers(len(seen)))]
            else:
                j = int(rng.choice(len(names), p=roam if rng.random() < p_roam else near))
            seen.append(j)
            local = int(rng.integers(t0, t1))
            lines.append(f"{user}\t{names[j]}\t{local - 60 * c.tz_offset_min}\t{c.tz_offset_min}")

    for ci, roster in enumerate(rosters):
        for u in roster:
            visit(u, ci, int(rng.integers(spec.visits_home[0], spec.visits_home[1] + 1)))
    for ci, users in away.items():
        for u in users:
            visit(u, ci, int(rng.integers(spec.visits_away[0], spec.visits_away[1] + 1)), tourist=True)

    order = rng.permutation(len(lines))
    return [lines[i] for i in order], venue_lines


FIXTURE_CONFIG = """\
# Synthetic 3-city fixture (see cityrec.synthetic)
[data]
checkins = fixture_checkins.tsv
venues = fixture_venues.tsv

[split]
train_start = 2012-05-01
train_end = 2012-10-31
test_start = 2012-11-01
test_end = 2012-11-30
kcore = 2

[experiment]
cities = north,south,far
strategies = single,ncd:1,pcd:1
cutoff = 5
seed = 7
jobs = 1

[rec:rnd]
[rec:pop]
[rec:avgdis]
[rec:pgn]
k = 100
similarity = SJ

[rec:ub]
k = 100
similarity = SJ

[rec:ib]
k = 100
similarity = SC

[rec:hkv]
factors = 10
alpha = 10
lambda = 10
iterations = 20
"""


def write_corpus(directory: str | Path, seed: int = 0, spec: PlantedSpec = PlantedSpec(),
                 prefix: str = "fixture") -> tuple[Path, Path, Path]:
    """Write check-ins, venues and a matching config into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    checkins, venues = make_planted_corpus(seed, spec)
    cpath, vpath, cfg = d / f"{prefix}_checkins.tsv", d / f"{prefix}_venues.tsv", d / f"{prefix}.cfg"
    cpath.write_text("# user\tvenue\tutc\toffset\n" + "\n".join(checkins) + "\n", encoding="utf-8")
    vpath.write_text("# venue\tlat\tlon\tcity\n" + "\n".join(venues) + "\n", encoding="utf-8")
    cfg.write_text(FIXTURE_CONFIG.replace("fixture_", f"{prefix}_"), encoding="utf-8")
    return cpath, vpath, cfg


def fixture_path(name: str = "fixture.cfg") -> Path:
    """Path of a file of the shipped fixture (generated with seed 0)."""
    return Path(str(resources.files("cityrec") / "data" / name))
