"""Raw check-in ingestion and the preprocessing pipeline:
parse -> local time -> deduplicate -> k-core -> temporal split -> per-city partition.
"""
from __future__ import annotations

import datetime as _dt
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, TextIO

import numpy as np

from .core import (
    MAX_TZ_OFFSET,
    MIN_TZ_OFFSET,
    CheckIn,
    CityTable,
    DateWindow,
    InteractionSet,
    Interner,
    VenueRecord,
    GeoPoint,
    local_day,
)
from .errors import ConfigError, DataError, InvalidInputError

_logger = logging.getLogger(__name__)

# "Tue Apr 03 18:00:09 +0000 2012"
LITERAL_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"

# default windows: May-October 2012 for training, November 2012 for testing
DEFAULT_TRAIN_WINDOW = DateWindow(_dt.date(2012, 5, 1), _dt.date(2012, 10, 31))
DEFAULT_TEST_WINDOW = DateWindow(_dt.date(2012, 11, 1), _dt.date(2012, 11, 30))


@dataclass(frozen=True)
class RejectedLine:
    source: str
    line_no: int
    reason: str
    text: str


@dataclass
class ParseReport:
    checkin_lines: int = 0
    venue_lines: int = 0
    accepted_checkins: int = 0
    accepted_venues: int = 0
    rejected: list[RejectedLine] = field(default_factory=list)

    def reasons(self) -> Counter:
        return Counter(r.reason for r in self.rejected)

    def as_lines(self) -> list[str]:
        out = [
            f"checkin_lines={self.checkin_lines}",
            f"venue_lines={self.venue_lines}",
            f"accepted_checkins={self.accepted_checkins}",
            f"accepted_venues={self.accepted_venues}",
            f"rejected={len(self.rejected)}",
        ]
        out += [f"rejected[{k}]={v}" for k, v in sorted(self.reasons().items())]
        return out


@dataclass
class RawCorpus:
    """Parsed check-ins (column arrays) plus the venue table and interners."""

    user: np.ndarray
    venue: np.ndarray
    utc_time: np.ndarray
    tz_offset_min: np.ndarray
    venues: CityTable
    users: Interner
    venue_ids: Interner
    report: ParseReport

    @property
    def checkins(self) -> list[CheckIn]:
        return [
            CheckIn(int(u), int(v), int(t), int(o))
            for u, v, t, o in zip(self.user, self.venue, self.utc_time, self.tz_offset_min)
        ]

    @property
    def venue_records(self) -> list[VenueRecord]:
        return self.venues.records()

    @property
    def cities(self) -> Interner:
        return self.venues.cities

    def local_times(self) -> np.ndarray:
        return self.utc_time + 60 * self.tz_offset_min

    def __len__(self) -> int:
        return len(self.user)


def _parse_time(field_: str) -> int:
    field_ = field_.strip()
    try:
        return int(field_)
    except ValueError:
        pass
    return int(_dt.datetime.strptime(field_, LITERAL_TIME_FORMAT).timestamp())


def _lines(stream: str | Path | IO | Iterable[str]) -> Iterable[str]:
    if isinstance(stream, (str, Path)):
        with open(stream, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from stream


def parse_corpus(checkin_stream, venue_stream) -> RawCorpus:
    """Parse tab-separated check-in and venue streams.

    Streams may be paths, open text files or any iterable of lines. Malformed
    lines are rejected and recorded in ``report.rejected``; parsing never aborts
    on bad data (an unreadable path still raises ``OSError``).
    """
    report = ParseReport()
    venue_ids = Interner()
    cities = Interner()
    lat: list[float] = []
    lon: list[float] = []
    city: list[int] = []

    for no, raw in enumerate(_lines(venue_stream), 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        report.venue_lines += 1
        parts = line.split("\t")
        if len(parts) < 4:
            report.rejected.append(RejectedLine("venues", no, "bad field", line))
            continue
        vid, slat, slon, scity = parts[0].strip(), parts[1], parts[2], parts[3].strip()
        try:
            p = GeoPoint(float(slat), float(slon))
        except (ValueError, InvalidInputError):
            report.rejected.append(RejectedLine("venues", no, "bad field", line))
            continue
        if not vid or not scity:
            report.rejected.append(RejectedLine("venues", no, "bad field", line))
            continue
        if vid in venue_ids:
            report.rejected.append(RejectedLine("venues", no, "duplicate venue", line))
            continue
        venue_ids.intern(vid)
        lat.append(p.lat)
        lon.append(p.lon)
        city.append(cities.intern(scity))
        report.accepted_venues += 1

    users = Interner()
    cu: list[int] = []
    cv: list[int] = []
    ct: list[int] = []
    co: list[int] = []
    for no, raw in enumerate(_lines(checkin_stream), 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        report.checkin_lines += 1
        parts = line.split("\t")
        if len(parts) < 4:
            report.rejected.append(RejectedLine("checkins", no, "bad field", line))
            continue
        uid, vid = parts[0].strip(), parts[1].strip()
        try:
            t = _parse_time(parts[2])
            off = int(parts[3].strip())
        except (ValueError, OverflowError):
            report.rejected.append(RejectedLine("checkins", no, "bad field", line))
            continue
        if not uid or not MIN_TZ_OFFSET <= off <= MAX_TZ_OFFSET:
            report.rejected.append(RejectedLine("checkins", no, "bad field", line))
            continue
        v = venue_ids.get(vid)
        if v is None:
            report.rejected.append(RejectedLine("checkins", no, "unknown venue", line))
            continue
        cu.append(users.intern(uid))
        cv.append(v)
        ct.append(t)
        co.append(off)
        report.accepted_checkins += 1

    if report.rejected:
        _logger.info("parse: rejected %d lines %s", len(report.rejected), dict(report.reasons()))
    return RawCorpus(
        user=np.asarray(cu, dtype=np.int64),
        venue=np.asarray(cv, dtype=np.int64),
        utc_time=np.asarray(ct, dtype=np.int64),
        tz_offset_min=np.asarray(co, dtype=np.int64),
        venues=CityTable(np.asarray(lat), np.asarray(lon), np.asarray(city, dtype=np.int64), cities),
        users=users,
        venue_ids=venue_ids,
        report=report,
    )


def deduplicate(corpus: RawCorpus | InteractionSet) -> InteractionSet:
    """One interaction per (user, venue), keeping the earliest local time."""
    if isinstance(corpus, InteractionSet):
        return corpus  # already duplicate-free by construction
    users, venues, times = corpus.user, corpus.venue, corpus.local_times()
    if len(users) == 0:
        return InteractionSet.empty(len(corpus.users), len(corpus.venue_ids))
    order = np.lexsort((times, venues, users))
    u, v, t = users[order], venues[order], times[order]
    first = np.ones(len(u), dtype=bool)
    first[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
    return InteractionSet.from_arrays(u[first], v[first], t[first], len(corpus.users), len(corpus.venue_ids))


def k_core(data: InteractionSet, k: int) -> InteractionSet:
    """Maximal sub-matrix where every remaining user and venue has >= k interactions."""
    if k < 1:
        raise ConfigError(f"k-core needs k >= 1, got {k}")
    alive = np.ones(len(data), dtype=bool)
    udeg = data.user_degree.copy()
    vdeg = data.venue_degree.copy()
    while True:
        bad = alive & ((udeg[data.users] < k) | (vdeg[data.venues] < k))
        if not bad.any():
            break
        alive &= ~bad
        np.subtract.at(udeg, data.users[bad], 1)
        np.subtract.at(vdeg, data.venues[bad], 1)
    return data if alive.all() else data.select(alive)


@dataclass(frozen=True)
class TemporalSplit:
    train: InteractionSet
    test: InteractionSet
    train_window: DateWindow
    test_window: DateWindow
    discarded: InteractionSet


def check_windows(train_window: DateWindow, test_window: DateWindow) -> None:
    for name, w in (("train", train_window), ("test", test_window)):
        if w.start > w.end:
            raise ConfigError(f"{name} window starts after it ends: {w}")
    if not train_window.end < test_window.start:
        raise ConfigError(f"train window {train_window} must end before test window {test_window} starts")


def temporal_split(data: InteractionSet, train_window: DateWindow, test_window: DateWindow) -> TemporalSplit:
    """Assign each interaction by the local date of its (earliest) timestamp."""
    train_window, test_window = DateWindow(*train_window), DateWindow(*test_window)
    check_windows(train_window, test_window)
    day = local_day(data.times)
    a, b = train_window.day_range()
    c, d = test_window.day_range()
    in_train = (day >= a) & (day <= b)
    in_test = (day >= c) & (day <= d)
    return TemporalSplit(
        data.select(in_train),
        data.select(in_test),
        train_window,
        test_window,
        data.select(~(in_train | in_test)),
    )


def partition_by_city(data: InteractionSet, venues: CityTable) -> dict[int, InteractionSet]:
    """Split interactions by the city of their venue. Users may span partitions."""
    if len(data) == 0:
        return {}
    if data.venues.max() >= len(venues.city):
        raise DataError("interaction references a venue missing from the city table")
    city = venues.city[data.venues]
    if (city < 0).any():
        bad = int(data.venues[np.flatnonzero(city < 0)[0]])
        raise DataError(f"venue {bad} has no city")
    return {int(c): data.select(city == c) for c in np.unique(city)}


@dataclass(frozen=True)
class CorpusStats:
    users: int
    items: int
    checkins: int
    density: float
    checkins_per_user: float
    checkins_per_item: float

    def as_lines(self) -> list[str]:
        return [f"{k}={v!r}" for k, v in self.__dict__.items()]


def corpus_stats(data: InteractionSet) -> CorpusStats:
    nu = len(data.active_users())
    ni = len(data.active_venues())
    c = len(data)
    return CorpusStats(
        users=nu,
        items=ni,
        checkins=c,
        density=c / (nu * ni) if nu and ni else 0.0,
        checkins_per_user=c / nu if nu else 0.0,
        checkins_per_item=c / ni if ni else 0.0,
    )


@dataclass
class Preprocessed:
    corpus: RawCorpus
    interactions: InteractionSet
    split: TemporalSplit
    train_by_city: dict[int, InteractionSet]
    test_by_city: dict[int, InteractionSet]


def preprocess(corpus: RawCorpus, train_window: DateWindow, test_window: DateWindow, k: int = 2) -> Preprocessed:
    """The fixed pipeline order: dedup -> k-core -> split -> partition."""
    check_windows(DateWindow(*train_window), DateWindow(*test_window))
    inter = k_core(deduplicate(corpus), k)
    split = temporal_split(inter, train_window, test_window)
    return Preprocessed(
        corpus,
        inter,
        split,
        partition_by_city(split.train, corpus.venues),
        partition_by_city(split.test, corpus.venues),
    )


def write_interactions(data: InteractionSet, corpus: RawCorpus, fh: TextIO) -> None:
    """Write interactions in check-in format with the local time and offset 0.

    Re-parsing the output reproduces the same local timestamps.
    """
    for u, v, t in zip(data.users.tolist(), data.venues.tolist(), data.times.tolist()):
        fh.write(f"{corpus.users.string_of(u)}\t{corpus.venue_ids.string_of(v)}\t{t}\t0\n")


def write_stats(stats: CorpusStats, fh: TextIO) -> None:
    fh.write("\n".join(stats.as_lines()) + "\n")


def interactions_to_text(data: InteractionSet, corpus: RawCorpus) -> str:
    buf = io.StringIO()
    write_interactions(data, corpus, buf)
    return buf.getvalue()
