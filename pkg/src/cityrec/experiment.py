"""Experiment orchestration: configuration, grid search, full runs and tables.

A configuration is an INI file::

    [data]            checkins, venues (paths relative to the config file)
    [split]           train_start, train_end, test_start, test_end, kcore
    [experiment]      cities, strategies, cutoff, seed, jobs, out, optima
    [rec:<kind>]      one block per recommender; comma-separated values form a grid

Recommender kinds: rnd, pop, avgdis, pgn, ub, ib, hkv.
"""
from __future__ import annotations

import configparser
import csv
import datetime as _dt
import hashlib
import io
import itertools
import logging
import os
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import DateWindow, InteractionSet
from .crossdomain import (
    Strategy,
    TrainingScope,
    avg_common_users,
    build_scope,
    city_profiles,
    users_by_city,
)
from .errors import CityRecError, ConfigError, DataError
from .evaluation import (
    CSV_HEADER,
    EvaluationTask,
    MetricReport,
    delta_percent,
    evaluate,
    report_rows,
    write_reports_csv,
)
from .ingest import (
    Preprocessed,
    RawCorpus,
    check_windows,
    corpus_stats,
    deduplicate,
    k_core,
    parse_corpus,
    preprocess,
    write_interactions,
    write_stats,
)
from .recommenders import (
    HKV,
    PGN,
    AvgDistanceRecommender,
    FactorModel,
    FactorModelParams,
    ItemKNN,
    PopularityRecommender,
    RandomRecommender,
    Recommender,
    UserKNN,
    fit_hkv,
)
from .similarity import SimilarityKind

_logger = logging.getLogger(__name__)

KINDS = ("rnd", "pop", "avgdis", "pgn", "ub", "ib", "hkv")
LABELS = {"rnd": "Rnd", "pop": "Pop", "avgdis": "AvgDis", "pgn": "PGN", "ub": "UB", "ib": "IB", "hkv": "HKV"}
# parameter keys per kind, in grid-enumeration order (outermost first)
PARAM_KEYS: dict[str, tuple[str, ...]] = {
    "rnd": (),
    "pop": (),
    "avgdis": (),
    "pgn": ("k", "similarity"),
    "ub": ("similarity", "k"),
    "ib": ("similarity", "k"),
    "hkv": ("factors", "alpha", "lambda", "iterations"),
}
K_GRID = (5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
DEFAULT_GRIDS: dict[str, dict[str, tuple]] = {
    "rnd": {},
    "pop": {},
    "avgdis": {},
    "pgn": {"k": (100,), "similarity": ("SJ",)},
    "ub": {"similarity": ("SC", "SJ"), "k": K_GRID},
    "ib": {"similarity": ("SC", "SJ"), "k": K_GRID},
    "hkv": {"factors": (10, 50, 100), "alpha": (0.1, 1.0, 10.0), "lambda": (0.1, 1.0, 10.0), "iterations": (20,)},
}
DEFAULT_PARAMS: dict[str, dict] = {
    "rnd": {},
    "pop": {},
    "avgdis": {},
    "pgn": {"k": 100, "similarity": "SJ"},
    "ub": {"k": 100, "similarity": "SJ"},
    "ib": {"k": 100, "similarity": "SJ"},
    "hkv": {"factors": 10, "alpha": 1.0, "lambda": 0.1, "iterations": 20},
}
# grid of a model that is not implemented here; only used to reconcile the
# total configuration count
EXCLUDED_GRID_POINTS = {"IRenMF": 8}

# Published per-city optima for the eight target cities (UB/IB: similarity, k;
# HKV: factors, alpha, lambda).
PUBLISHED_OPTIMA: dict[str, dict[str, dict]] = {}
for _city, _ub, _ib, _hkv in [
    ("IST", ("SJ", 90), ("SC", 100), (10, 10, 10)),
    ("JAK", ("SJ", 100), ("SC", 80), (10, 10, 10)),
    ("KUA", ("SJ", 100), ("SJ", 100), (10, 10, 10)),
    ("MEX", ("SJ", 100), ("SJ", 100), (10, 10, 10)),
    ("MOS", ("SC", 100), ("SJ", 100), (50, 10, 1)),
    ("SAN", ("SJ", 90), ("SJ", 80), (10, 10, 10)),
    ("SAO", ("SJ", 100), ("SJ", 100), (50, 10, 0.1)),
    ("TOK", ("SJ", 80), ("SC", 80), (10, 10, 10)),
]:
    PUBLISHED_OPTIMA[_city] = {
        "ub": {"similarity": _ub[0], "k": _ub[1]},
        "ib": {"similarity": _ib[0], "k": _ib[1]},
        "hkv": {"factors": _hkv[0], "alpha": float(_hkv[1]), "lambda": float(_hkv[2]), "iterations": 20},
        "pgn": {"k": 100, "similarity": "SJ"},
    }

_SECTION_KEYS = {
    "data": {"checkins", "venues"},
    "split": {"train_start", "train_end", "test_start", "test_end", "kcore"},
    "experiment": {"cities", "strategies", "cutoff", "seed", "jobs", "out", "optima"},
}


# -- configuration ----------------------------------------------------------------


def _convert(kind: str, key: str, raw: str):
    try:
        if key in ("k", "factors", "iterations"):
            v = int(raw)
            if v < 1:
                raise ValueError
            return v
        if key in ("alpha", "lambda"):
            return float(raw)
        if key == "similarity":
            return SimilarityKind.parse(raw).short
    except ValueError:
        raise ConfigError(f"[rec:{kind}] bad value {raw!r} for {key}") from None
    raise ConfigError(f"[rec:{kind}] unknown key {key!r}")


def canonical_params(kind: str, params: Mapping) -> str:
    """Stable text form, e.g. ``similarity=SJ,k=90``."""
    return ",".join(f"{k}={params[k]!r}" if isinstance(params[k], float) else f"{k}={params[k]}"
                    for k in PARAM_KEYS[kind] if k in params)


def parse_params(kind: str, text: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, _, val = part.partition("=")
        out[key.strip()] = _convert(kind, key.strip(), val.strip())
    return out


@dataclass(frozen=True)
class RecommenderSpec:
    """One roster entry: the grid (key -> values) given in the config."""

    kind: str
    grid: tuple[tuple[str, tuple], ...] = ()

    @property
    def label(self) -> str:
        return LABELS[self.kind]

    def values(self) -> dict[str, tuple]:
        return dict(self.grid)

    def points(self, defaults: Mapping[str, Mapping[str, Sequence]] = DEFAULT_GRIDS) -> list[dict]:
        """Grid points in first-listed order; keys absent from the config
        take their default grid."""
        given = self.values()
        axes = []
        for key in PARAM_KEYS[self.kind]:
            vals = given.get(key, tuple(defaults[self.kind].get(key, ())))
            if not vals:
                vals = (DEFAULT_PARAMS[self.kind][key],)
            axes.append([(key, v) for v in vals])
        return [dict(p) for p in itertools.product(*axes)]

    def single(self) -> dict | None:
        """Fixed parameters when every configured key has one value, using
        model defaults for absent keys; None if the block is a grid."""
        given = self.values()
        if any(len(v) != 1 for v in given.values()):
            return None
        out = dict(DEFAULT_PARAMS[self.kind])
        out.update({k: v[0] for k, v in given.items()})
        return out


@dataclass
class ExperimentConfig:
    checkins: Path
    venues: Path
    train_window: DateWindow
    test_window: DateWindow
    kcore: int = 2
    cities: tuple[str, ...] | None = None
    strategies: tuple[Strategy, ...] = (Strategy("single"),)
    roster: tuple[RecommenderSpec, ...] = ()
    cutoff: int = 5
    seed: int = 0
    jobs: int = 1
    out: Path | None = None
    optima: str | None = None
    source_text: str = field(default="", repr=False)
    base_dir: Path = field(default=Path("."), repr=False)

    def config_hash(self) -> str:
        """Hash of the effective settings (not of the file's formatting)."""
        h = hashlib.sha256()
        for item in (
            self.checkins.name, _digest_file(self.checkins), self.venues.name, _digest_file(self.venues),
            self.train_window, self.test_window, self.kcore, self.cities,
            tuple(str(s) for s in self.strategies), self.roster, self.cutoff, self.seed, self.optima,
        ):
            h.update(repr(item).encode())
            h.update(b"\0")
        return h.hexdigest()[:16]

    def with_overrides(self, *, seed=None, jobs=None, out=None, cities=None, strategies=None) -> ExperimentConfig:
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if jobs is not None:
            if int(jobs) < 1:
                raise ConfigError("jobs must be >= 1")
            kw["jobs"] = int(jobs)
        if out is not None:
            kw["out"] = Path(out)
        if cities is not None:
            kw["cities"] = tuple(cities)
        if strategies is not None:
            kw["strategies"] = tuple(strategies)
        return replace(self, **kw)


def _digest_file(path: Path) -> str:
    try:
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
        return h.hexdigest()[:16]
    except OSError:
        return "missing"


def _parse_date(section: str, key: str, raw: str) -> _dt.date:
    try:
        return _dt.date.fromisoformat(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected YYYY-MM-DD, got {raw!r}") from None


def _int(section: str, key: str, raw: str, minimum: int | None = None) -> int:
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from None
    if minimum is not None and v < minimum:
        raise ConfigError(f"[{section}] {key} must be >= {minimum}")
    return v


def _split_list(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def parse_config(text: str, base_dir: str | Path = ".") -> ExperimentConfig:
    """Parse and validate a configuration; raises ConfigError on any problem."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    base = Path(base_dir)
    roster = []
    for name in cp.sections():
        keys = set(cp[name])
        if name.startswith("rec:"):
            kind = name[4:].strip().lower()
            if kind not in KINDS:
                raise ConfigError(f"unknown recommender [{name}]; expected one of {', '.join(KINDS)}")
            bad = keys - set(PARAM_KEYS[kind])
            if bad:
                raise ConfigError(f"[{name}] unknown key(s): {', '.join(sorted(bad))}")
            grid = []
            for key in PARAM_KEYS[kind]:
                if key in cp[name]:
                    vals = tuple(_convert(kind, key, v) for v in _split_list(cp[name][key]))
                    if not vals:
                        raise ConfigError(f"[{name}] {key}: empty grid")
                    grid.append((key, vals))
            roster.append(RecommenderSpec(kind, tuple(grid)))
        elif name in _SECTION_KEYS:
            bad = keys - _SECTION_KEYS[name]
            if bad:
                raise ConfigError(f"[{name}] unknown key(s): {', '.join(sorted(bad))}")
        else:
            raise ConfigError(f"unknown section [{name}]")
    if "data" not in cp or not {"checkins", "venues"} <= set(cp["data"]):
        raise ConfigError("[data] needs checkins and venues")
    if "split" not in cp or not {"train_start", "train_end", "test_start", "test_end"} <= set(cp["split"]):
        raise ConfigError("[split] needs train_start, train_end, test_start, test_end")
    sp_ = cp["split"]
    train = DateWindow(_parse_date("split", "train_start", sp_["train_start"]),
                       _parse_date("split", "train_end", sp_["train_end"]))
    test = DateWindow(_parse_date("split", "test_start", sp_["test_start"]),
                      _parse_date("split", "test_end", sp_["test_end"]))
    check_windows(train, test)
    ex = cp["experiment"] if "experiment" in cp else {}
    cities = None
    if "cities" in ex and ex["cities"].strip().lower() not in ("", "all"):
        cities = tuple(_split_list(ex["cities"]))
    strategies = tuple(Strategy.parse(s) for s in _split_list(ex.get("strategies", "single")))
    if not strategies:
        raise ConfigError("[experiment] strategies is empty")
    out = ex.get("out")
    return ExperimentConfig(
        checkins=(base / cp["data"]["checkins"]).resolve(),
        venues=(base / cp["data"]["venues"]).resolve(),
        train_window=train,
        test_window=test,
        kcore=_int("split", "kcore", sp_.get("kcore", "2"), 1),
        cities=cities,
        strategies=strategies,
        roster=tuple(roster),
        cutoff=_int("experiment", "cutoff", ex.get("cutoff", "5"), 1),
        seed=_int("experiment", "seed", ex.get("seed", "0")),
        jobs=_int("experiment", "jobs", ex.get("jobs", "1"), 1),
        out=(base / out).resolve() if out else None,
        optima=ex.get("optima") or None,
        source_text=text,
        base_dir=base,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from None
    return parse_config(text, p.parent)


def derive_seed(master: int, component: str) -> int:
    """Per-component seed from the master seed by stable hashing."""
    digest = hashlib.sha256(f"{master}:{component}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


# -- building models ----------------------------------------------------------------


def make_recommender(kind: str, params: Mapping, corpus: RawCorpus, seed: int) -> Recommender:
    p = {**DEFAULT_PARAMS[kind], **params}
    if kind == "rnd":
        return RandomRecommender(derive_seed(seed, "rnd"))
    if kind == "pop":
        return PopularityRecommender()
    if kind == "avgdis":
        return AvgDistanceRecommender(corpus.venues)
    if kind == "pgn":
        return PGN(corpus.venues, p["k"], SimilarityKind.parse(p["similarity"]))
    if kind == "ub":
        return UserKNN(p["k"], SimilarityKind.parse(p["similarity"]))
    if kind == "ib":
        return ItemKNN(p["k"], SimilarityKind.parse(p["similarity"]))
    if kind == "hkv":
        return HKV(hkv_params(p, seed))
    raise ConfigError(f"unknown recommender kind {kind!r}")


def hkv_params(params: Mapping, seed: int) -> FactorModelParams:
    return FactorModelParams(
        factors=int(params["factors"]),
        confidence_alpha=float(params["alpha"]),
        lam=float(params["lambda"]),
        iterations=int(params["iterations"]),
        seed=derive_seed(seed, "hkv"),
    )


class ModelCache:
    """Fitted models keyed by (scope fingerprint, kind, parameters, seed).

    Factor models are also dumped to ``directory`` when one is given, so a
    later run with the same key skips the factorisation.
    """

    def __init__(self, directory: Path | None = None):
        self.directory = directory
        self._models: dict[tuple, Recommender] = {}
        self._locks: dict[tuple, threading.Lock] = {}
        self._guard = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(scope: TrainingScope, kind: str, params: Mapping, seed: int) -> tuple:
        return (scope.fingerprint(), kind, canonical_params(kind, params), seed if kind in ("rnd", "hkv") else None)

    def get(self, scope: TrainingScope, kind: str, params: Mapping, corpus: RawCorpus, seed: int) -> Recommender:
        key = self.key(scope, kind, params, seed)
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key in self._models:
                self.hits += 1
                return self._models[key]
            self.misses += 1
            model = make_recommender(kind, params, corpus, seed)
            if kind == "hkv" and self.directory is not None:
                model = self._fit_hkv_cached(model, scope, key)
            else:
                model.fit(scope.merged_train)
            self._models[key] = model
            return model

    def _fit_hkv_cached(self, model: HKV, scope: TrainingScope, key: tuple) -> HKV:
        name = hashlib.sha256(repr(key).encode()).hexdigest()[:20] + ".factors"
        path = self.directory / name
        train = scope.merged_train
        if path.exists():
            try:
                fm = FactorModel.load(path)
                if fm.n_users == train.n_users and fm.n_venues == train.n_venues:
                    model.train, model.model = train, fm
                    return model
            except (OSError, ValueError):
                _logger.warning("ignoring unreadable factor cache %s", path)
        model.train = train
        model.model = fit_hkv(train, model.params)
        self.directory.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}.{threading.get_ident()}")
        model.model.dump(tmp)
        os.replace(tmp, path)
        return model


# -- shared pipeline stages ---------------------------------------------------------


class StageError(CityRecError):
    """A pipeline stage failed; carries the stage name and keeps the cause's exit code."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        _logger.info("stage %s", self.name)
        return self

    def __exit__(self, et, e, tb):
        if e is not None and not isinstance(e, StageError) and isinstance(e, Exception):
            raise StageError(self.name, e) from e
        return False


def load_corpus(config: ExperimentConfig) -> RawCorpus:
    for p in (config.checkins, config.venues):
        if not p.exists():
            raise DataError(f"input file not found: {p}")
    corpus = parse_corpus(config.checkins, config.venues)
    if corpus.report.rejected:
        _logger.warning("%d input lines rejected: %s", len(corpus.report.rejected), dict(corpus.report.reasons()))
    return corpus


@dataclass
class Prepared:
    config: ExperimentConfig
    corpus: RawCorpus
    data: Preprocessed
    profiles: dict
    targets: list[int]

    def city_name(self, c: int) -> str:
        return self.corpus.cities.string_of(c)


def prepare(config: ExperimentConfig) -> Prepared:
    with _Stage("parse"):
        corpus = load_corpus(config)
    with _Stage("preprocess"):
        data = preprocess(corpus, config.train_window, config.test_window, config.kcore)
        if not data.train_by_city:
            raise DataError("no training interactions survive preprocessing")
        profiles = city_profiles(data.train_by_city, corpus.venues)
    with _Stage("scopes"):
        targets = resolve_targets(config, corpus, profiles)
    return Prepared(config, corpus, data, profiles, targets)


def resolve_targets(config: ExperimentConfig, corpus: RawCorpus, profiles: Mapping) -> list[int]:
    if config.cities is None:
        return sorted(profiles, key=lambda c: corpus.cities.string_of(c))
    out = []
    for name in config.cities:
        c = corpus.cities.get(name)
        if c is None:
            raise ConfigError(f"unknown city {name!r}")
        if c not in profiles:
            raise DataError(f"city {name!r} has no training data after preprocessing")
        out.append(c)
    return out


# -- optima -------------------------------------------------------------------------


def load_optima(ref: str, base_dir: Path = Path(".")) -> dict[str, dict[str, dict]]:
    """``published`` (built-in preset) or a path to an optima file written by
    :func:`grid_search`."""
    if ref.strip().lower() == "published":
        return {c: {k: dict(v) for k, v in recs.items()} for c, recs in PUBLISHED_OPTIMA.items()}
    path = Path(ref) if Path(ref).is_absolute() else base_dir / ref
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as e:
        raise ConfigError(f"cannot read optima file {path}: {e}") from None
    out: dict[str, dict[str, dict]] = {}
    with fh:
        for row in csv.DictReader(fh):
            kind = row["recommender"].strip().lower()
            if kind not in KINDS:
                raise ConfigError(f"optima file {path}: unknown recommender {row['recommender']!r}")
            out.setdefault(row["city"], {})[kind] = parse_params(kind, row["params"])
    return out


def resolve_params(config: ExperimentConfig, spec: RecommenderSpec, city: str,
                   optima: Mapping[str, Mapping[str, dict]] | None) -> dict:
    if not PARAM_KEYS[spec.kind]:
        return {}
    fixed = spec.single()
    if optima is not None and city in optima and spec.kind in optima[city]:
        return {**DEFAULT_PARAMS[spec.kind], **optima[city][spec.kind]}
    if fixed is not None:
        return fixed
    raise ConfigError(f"[rec:{spec.kind}] is a grid and no optimum is known for {city}; "
                      "run gridsearch and set [experiment] optima")


# -- atomic output directory ----------------------------------------------------------


class OutputDir:
    """Files are staged in a private directory and moved into place on
    success. On failure a STALE marker names the failed stage."""

    STALE = "STALE"

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.stage_dir = self.root / f".staging-{os.getpid()}-{threading.get_ident()}"
        self.files: dict[str, bytes] = {}

    def write_text(self, name: str, text: str) -> None:
        self.files[name] = text.encode("utf-8")

    def __enter__(self):
        return self

    def __exit__(self, et, e, tb):
        if e is None:
            self.publish()
        else:
            shutil.rmtree(self.stage_dir, ignore_errors=True)
            stage = getattr(e, "stage", "unknown")
            (self.root / self.STALE).write_text(f"stage={stage}\nerror={e}\n", encoding="utf-8")
        return False

    def publish(self) -> None:
        self.stage_dir.mkdir(parents=True, exist_ok=True)
        try:
            for name, data in self.files.items():
                dest = self.stage_dir / name
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_bytes(data)
            for name in self.files:
                final = self.root / name
                final.parent.mkdir(parents=True, exist_ok=True)
                os.replace(self.stage_dir / name, final)
        finally:
            shutil.rmtree(self.stage_dir, ignore_errors=True)
        stale = self.root / self.STALE
        if stale.exists():
            stale.unlink()


def _manifest(config: ExperimentConfig, command: str, files: Mapping[str, bytes], extra: Iterable[str] = ()) -> str:
    from . import __version__

    lines = [
        f"command={command}",
        f"version={__version__}",
        f"config_hash={config.config_hash()}",
        f"seed={config.seed}",
        f"cutoff={config.cutoff}",
        f"train_window={config.train_window.start}..{config.train_window.end}",
        f"test_window={config.test_window.start}..{config.test_window.end}",
        f"kcore={config.kcore}",
        f"strategies={','.join(str(s) for s in config.strategies)}",
    ]
    lines.extend(extra)
    for name in sorted(files):
        lines.append(f"file {name} sha256={hashlib.sha256(files[name]).hexdigest()}")
    return "\n".join(lines) + "\n"


def _require_out(config: ExperimentConfig) -> Path:
    if config.out is None:
        raise ConfigError("no output directory: pass --out or set [experiment] out")
    return config.out


# -- preprocess / split commands ------------------------------------------------------


def run_preprocess(config: ExperimentConfig) -> Path:
    """Parse, deduplicate and k-core filter; write interactions, stats and the
    parse report."""
    out = _require_out(config)
    with OutputDir(out) as od:
        with _Stage("parse"):
            corpus = load_corpus(config)
        with _Stage("preprocess"):
            inter = k_core(deduplicate(corpus), config.kcore)
            buf = io.StringIO()
            write_interactions(inter, corpus, buf)
            od.write_text("interactions.tsv", buf.getvalue())
            buf = io.StringIO()
            write_stats(corpus_stats(inter), buf)
            od.write_text("stats.txt", buf.getvalue())
            od.write_text("parse_report.txt", "\n".join(corpus.report.as_lines()) + "\n")
        od.write_text("manifest.txt", _manifest(config, "preprocess", od.files))
    return out


def run_split(config: ExperimentConfig) -> Path:
    """Full preprocessing plus the temporal split; writes train/test in
    check-in format with per-window and per-city statistics."""
    out = _require_out(config)
    with OutputDir(out) as od:
        prep = prepare(config)
        with _Stage("write"):
            d, corpus = prep.data, prep.corpus
            for name, part in (("train", d.split.train), ("test", d.split.test)):
                buf = io.StringIO()
                write_interactions(part, corpus, buf)
                od.write_text(f"{name}.tsv", buf.getvalue())
                buf = io.StringIO()
                write_stats(corpus_stats(part), buf)
                od.write_text(f"stats_{name}.txt", buf.getvalue())
            rows = ["city\ttrain_users\ttrain_venues\ttrain_interactions\ttest_users\ttest_interactions"]
            for c in sorted(d.train_by_city, key=prep.city_name):
                tr = d.train_by_city[c]
                te = d.test_by_city.get(c)
                rows.append("\t".join(map(str, [
                    prep.city_name(c), len(tr.active_users()), len(tr.active_venues()), len(tr),
                    0 if te is None else len(te.active_users()), 0 if te is None else len(te)])))
            od.write_text("cities.tsv", "\n".join(rows) + "\n")
            od.write_text("manifest.txt", _manifest(config, "split", od.files,
                                                    [f"discarded={len(d.split.discarded)}"]))
    return out


# -- grid search ------------------------------------------------------------------------


@dataclass(frozen=True)
class GridResult:
    city: str
    kind: str
    params: dict
    precision: float
    evaluated: int


def count_configurations(roster: Sequence[RecommenderSpec]) -> dict[str, int]:
    return {spec.label: len(spec.points()) for spec in roster}


def default_roster() -> tuple[RecommenderSpec, ...]:
    return tuple(RecommenderSpec(k) for k in KINDS)


def grid_search(config: ExperimentConfig, prep: Prepared | None = None,
                cache: ModelCache | None = None) -> tuple[dict[str, dict[str, GridResult]], list[GridResult]]:
    """Evaluate every grid point on each target's single-domain scope and keep
    the highest P@cutoff per recommender (first listed wins ties)."""
    prep = prep or prepare(config)
    roster = config.roster or default_roster()
    cache = cache or ModelCache()
    best: dict[str, dict[str, GridResult]] = {}
    trail: list[GridResult] = []
    for c in prep.targets:
        city = prep.city_name(c)
        scope = build_scope(c, Strategy("single"), prep.data.train_by_city, prep.profiles)
        task = EvaluationTask(c, scope, _test_for(prep, c), config.cutoff)
        for spec in roster:
            points = spec.points()
            if not points:
                raise ConfigError(f"[rec:{spec.kind}] empty grid")
            jobs = [(spec.kind, p) for p in points]

            def run_one(job):
                kind, params = job
                model = cache.get(scope, kind, params, prep.corpus, config.seed)
                rep = evaluate(model, task)
                return GridResult(city, kind, params, rep.mean("precision"), rep.evaluated)

            with _Stage(f"gridsearch {city}/{spec.label}"):
                results = _pool_map(run_one, jobs, config.jobs)
            trail.extend(results)
            top = results[0]
            for r in results[1:]:
                if r.precision > top.precision:
                    top = r
            best.setdefault(city, {})[spec.kind] = top
    return best, trail


def run_gridsearch(config: ExperimentConfig) -> Path:
    out = _require_out(config)
    roster = config.roster or default_roster()
    counts = count_configurations(roster)
    with OutputDir(out) as od:
        prep = prepare(config)
        best, trail = grid_search(config, prep)
        with _Stage("write"):
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["city", "recommender", "params", "precision", "evaluated_users"])
            for city in best:
                for kind, r in best[city].items():
                    w.writerow([city, kind, canonical_params(kind, r.params), repr(r.precision), r.evaluated])
            od.write_text("optima.csv", buf.getvalue())
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["city", "recommender", "params", "precision", "evaluated_users"])
            for r in trail:
                w.writerow([r.city, r.kind, canonical_params(r.kind, r.params), repr(r.precision), r.evaluated])
            od.write_text("grid.csv", buf.getvalue())
            od.write_text("optima.txt", render_optima(best, roster))
            total = sum(counts.values())
            excluded = sum(EXCLUDED_GRID_POINTS.values())
            extra = [f"configurations {label}={n}" for label, n in counts.items()]
            extra += [f"configurations_total={total}",
                      f"configurations_not_implemented={excluded} ({', '.join(EXCLUDED_GRID_POINTS)})",
                      f"configurations_with_not_implemented={total + excluded}"]
            od.write_text("manifest.txt", _manifest(config, "gridsearch", od.files, extra))
    return out


def render_optima(best: Mapping[str, Mapping[str, GridResult]], roster: Sequence[RecommenderSpec]) -> str:
    tuned = [s.kind for s in roster if len(s.points()) > 1 or PARAM_KEYS[s.kind]]
    header = ["city"] + [LABELS[k] for k in tuned]
    rows = [header]
    for city, recs in best.items():
        rows.append([city] + [canonical_params(k, recs[k].params) if k in recs else "-" for k in tuned])
    return _align(rows)


# -- full run ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JobResult:
    city: str
    strategy: Strategy
    kind: str
    params: dict
    report: MetricReport


def _test_for(prep: Prepared, c: int):
    t = prep.data.test_by_city.get(c)
    if t is None:
        t = InteractionSet.empty(prep.data.interactions.n_users, prep.data.interactions.n_venues)
    return t


def _pool_map(fn, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def evaluate_all(config: ExperimentConfig, prep: Prepared, cache: ModelCache | None = None) -> list[JobResult]:
    """Fit and evaluate every (city, strategy, recommender) job."""
    roster = config.roster or tuple(RecommenderSpec(k) for k in KINDS)
    optima = load_optima(config.optima, config.base_dir) if config.optima else None
    cache = cache or ModelCache()
    jobs = []
    with _Stage("scopes"):
        for c in prep.targets:
            city = prep.city_name(c)
            for strat in config.strategies:
                scope = build_scope(c, strat, prep.data.train_by_city, prep.profiles)
                task = EvaluationTask(c, scope, _test_for(prep, c), config.cutoff)
                for spec in roster:
                    jobs.append((city, strat, spec.kind, resolve_params(config, spec, city, optima), scope, task))

    def run_one(job):
        city, strat, kind, params, scope, task = job
        model = cache.get(scope, kind, params, prep.corpus, config.seed)
        return JobResult(city, strat, kind, params, evaluate(model, task))

    with _Stage("fit+evaluate"):
        return _pool_map(run_one, jobs, config.jobs)


def metrics_csv(results: Sequence[JobResult]) -> str:
    rows = []
    for r in results:
        rows.extend(report_rows(r.city, str(r.strategy), LABELS[r.kind], r.report))
    buf = io.StringIO()
    write_reports_csv(rows, buf)
    return buf.getvalue()


def run_pipeline(config: ExperimentConfig, cache_dir: Path | None = None) -> Path:
    """Run everything and write metrics, tables, overlap, stats and a manifest
    into the output directory."""
    out = _require_out(config)
    with OutputDir(out) as od:
        prep = prepare(config)
        cache = ModelCache(cache_dir if cache_dir is not None else out / "cache")
        results = evaluate_all(config, prep, cache)
        with _Stage("tables"):
            od.write_text("metrics.csv", metrics_csv(results))
            table = ResultTable.from_csv_text(od.files["metrics.csv"].decode(), metric="ndcg")
            od.write_text("table_ndcg.csv", table.to_csv())
            od.write_text("table_ndcg.txt", table.to_text())
            od.write_text("overlap.csv", overlap_csv(prep))
            od.write_text("overlap.txt", overlap_text(prep))
            buf = io.StringIO()
            write_stats(corpus_stats(prep.data.split.train), buf)
            od.write_text("stats_train.txt", buf.getvalue())
            buf = io.StringIO()
            write_stats(corpus_stats(prep.data.split.test), buf)
            od.write_text("stats_test.txt", buf.getvalue())
            scope_lines = []
            for c in prep.targets:
                for strat in config.strategies:
                    scope = build_scope(c, strat, prep.data.train_by_city, prep.profiles)
                    scope_lines.extend(scope.manifest_lines(prep.corpus.cities))
                    scope_lines.append("")
            od.write_text("scopes.txt", "\n".join(scope_lines))
            od.write_text("manifest.txt", _manifest(config, "run", od.files))
    return out


# -- tables -----------------------------------------------------------------------------

UP, DOWN, BEST = "^", "v", "*"


@dataclass
class ResultTable:
    """Rows are (city, strategy); columns are recommenders.

    Each cell holds the metric value and, for cross-domain rows, the change
    in percent against the same city's single-domain row.
    """

    metric: str
    columns: list[str]
    rows: list[tuple[str, str]]
    values: dict[tuple[str, str, str], float]

    @classmethod
    def from_csv_text(cls, text: str, metric: str = "ndcg") -> ResultTable:
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != CSV_HEADER:
            raise DataError("metrics file has an unexpected header")
        columns: list[str] = []
        rows: list[tuple[str, str]] = []
        values = {}
        for rec in reader:
            if rec["metric"] != metric:
                continue
            key = (rec["city"], rec["strategy"])
            if key not in rows:
                rows.append(key)
            if rec["recommender"] not in columns:
                columns.append(rec["recommender"])
            values[(rec["city"], rec["strategy"], rec["recommender"])] = float(rec["value"])
        if not values:
            raise DataError(f"no rows for metric {metric!r}")
        return cls(metric, columns, rows, values)

    def value(self, city: str, strategy: str, column: str) -> float | None:
        return self.values.get((city, strategy, column))

    def delta(self, city: str, strategy: str, column: str) -> float | None:
        if strategy == "single":
            return None
        v, sd = self.value(city, strategy, column), self.value(city, "single", column)
        if v is None or sd is None:
            return None
        return delta_percent(v, sd)

    def best_column(self, city: str, strategy: str) -> str | None:
        """Highest value in the row; the first column wins ties."""
        best = None
        for col in self.columns:
            v = self.value(city, strategy, col)
            if v is not None and (best is None or v > best[0]):
                best = (v, col)
        return None if best is None else best[1]

    def delta_extremes(self, city: str, strategy: str) -> tuple[str | None, str | None]:
        """Columns with the largest positive and the largest negative change."""
        up = down = None
        for col in self.columns:
            d = self.delta(city, strategy, col)
            if d is None:
                continue
            if d > 0 and (up is None or d > up[0]):
                up = (d, col)
            if d < 0 and (down is None or d < down[0]):
                down = (d, col)
        return (None if up is None else up[1]), (None if down is None else down[1])

    def marks(self, city: str, strategy: str, column: str) -> str:
        m = ""
        if self.best_column(city, strategy) == column:
            m += BEST
        up, down = self.delta_extremes(city, strategy)
        if up == column:
            m += UP
        if down == column:
            m += DOWN
        return m

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["city", "strategy", "recommender", "metric", "value", "delta_percent", "marks"])
        for city, strat in self.rows:
            for col in self.columns:
                v = self.value(city, strat, col)
                if v is None:
                    continue
                d = self.delta(city, strat, col)
                w.writerow([city, strat, col, self.metric, repr(v), "" if d is None else repr(d),
                            self.marks(city, strat, col)])
        return buf.getvalue()

    def to_text(self) -> str:
        out = [["city", "strategy"] + self.columns]
        for city, strat in self.rows:
            line = [city, Strategy.parse(strat).label]
            for col in self.columns:
                v = self.value(city, strat, col)
                if v is None:
                    line.append("-")
                    continue
                cell = f"{v:.3f}"
                d = self.delta(city, strat, col)
                if strat != "single":
                    cell += " (n/a)" if d is None else f" ({d:+.1f}%)"
                cell += self.marks(city, strat, col)
                line.append(cell)
            out.append(line)
        legend = f"\n{BEST} best in row; {UP} largest gain, {DOWN} largest loss versus single-domain\n"
        return _align(out) + legend


def _align(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def render_tables(metrics_path: str | Path, out_dir: str | Path | None = None,
                  metrics: Sequence[str] = ("ndcg", "precision", "recall")) -> list[Path]:
    """Re-render table files from an existing metrics CSV."""
    metrics_path = Path(metrics_path)
    try:
        text = metrics_path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {metrics_path}: {e}") from None
    out = Path(out_dir) if out_dir is not None else metrics_path.parent
    written = []
    od = OutputDir(out)
    with od:
        for m in metrics:
            t = ResultTable.from_csv_text(text, m)
            od.write_text(f"table_{m}.csv", t.to_csv())
            od.write_text(f"table_{m}.txt", t.to_text())
            written += [out / f"table_{m}.csv", out / f"table_{m}.txt"]
    return written


# -- overlap ----------------------------------------------------------------------------


def overlap_rows(prep: Prepared) -> list[tuple[str, str, str, float]]:
    """(variant, strategy, city, mean overlap) for every cross-domain strategy.

    ``train`` uses each city's training users; ``raw`` uses users of the
    deduplicated corpus before filtering and splitting.
    """
    raw_users = users_by_city(deduplicate(prep.corpus), prep.corpus.venues)
    rows = []
    for variant, users in (("train", None), ("raw", raw_users)):
        for strat in prep.config.strategies:
            if strat.kind == "single":
                continue
            for c in prep.targets:
                rows.append((variant, str(strat), prep.city_name(c),
                             avg_common_users(c, strat, prep.profiles, users)))
    return rows


def overlap_csv(prep: Prepared) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "strategy", "city", "overlap"])
    for variant, strat, city, v in overlap_rows(prep):
        w.writerow([variant, strat, city, repr(v)])
    return buf.getvalue()


def overlap_text(prep: Prepared) -> str:
    rows = overlap_rows(prep)
    cities = [prep.city_name(c) for c in prep.targets]
    parts = []
    for variant in ("train", "raw"):
        table = [["strategy"] + cities]
        for strat in prep.config.strategies:
            if strat.kind == "single":
                continue
            vals = {city: v for var, s, city, v in rows if var == variant and s == str(strat)}
            table.append([strat.label] + [f"{100 * vals[c]:.2f}%" for c in cities])
        parts.append(f"common users ({variant} user sets)\n" + _align(table))
    return "\n".join(parts)


def report_overlap(config: ExperimentConfig) -> Path:
    out = _require_out(config)
    with OutputDir(out) as od:
        prep = prepare(config)
        with _Stage("overlap"):
            od.write_text("overlap.csv", overlap_csv(prep))
            od.write_text("overlap.txt", overlap_text(prep))
            od.write_text("manifest.txt", _manifest(config, "overlap", od.files))
    return out
