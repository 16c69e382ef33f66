"""City-as-domain venue recommendation toolkit."""
from __future__ import annotations

__version__ = "0.1.0"

from .core import (
    CheckIn,
    CityTable,
    DateWindow,
    GeoPoint,
    InteractionSet,
    Interner,
    VenueRecord,
    geographic_midpoint,
    haversine_km,
    local_time,
)
from .crossdomain import (
    CityProfile,
    Strategy,
    TrainingScope,
    avg_common_users,
    build_scope,
    city_distance,
    city_profiles,
    common_users,
    nearest_cities,
    top_popular_cities,
)
from .errors import (
    CityRecError,
    ConfigError,
    DataError,
    DegenerateMidpointError,
    InvalidInputError,
    NumericalError,
)
from .evaluation import (
    EvaluationTask,
    MetricReport,
    RankedList,
    candidate_set,
    delta_percent,
    evaluate,
    ndcg_at_k,
    precision_at_k,
    rank,
    recall_at_k,
)
from .ingest import (
    CorpusStats,
    RawCorpus,
    TemporalSplit,
    corpus_stats,
    deduplicate,
    k_core,
    parse_corpus,
    partition_by_city,
    preprocess,
    temporal_split,
)
from .recommenders import (
    HKV,
    PGN,
    AvgDistanceRecommender,
    FactorModel,
    FactorModelParams,
    ItemKNN,
    KnnParams,
    PopularityRecommender,
    RandomRecommender,
    Recommender,
    UserKNN,
    fit_hkv,
    score_factor,
)
from .similarity import SET_COSINE, SET_JACCARD, SimilarityKind, set_cosine, set_jaccard

import types as _types

__all__ = sorted(
    n for n, v in globals().items()
    if not n.startswith("_") and n != "annotations" and not isinstance(v, _types.ModuleType)
)
