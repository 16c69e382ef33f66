"""Binary-set similarities for neighbourhood models."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Collection

import numpy as np

JACCARD = "jaccard"
COSINE = "cosine"


@dataclass(frozen=True)
class SimilarityKind:
    kind: str = JACCARD
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in (JACCARD, COSINE):
            raise ValueError(f"unknown similarity {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @classmethod
    def parse(cls, name: str) -> SimilarityKind:
        key = name.strip().lower()
        if key in ("sj", "setjaccard", "jaccard"):
            return cls(JACCARD)
        if key in ("sc", "setcosine", "cosine"):
            return cls(COSINE)
        raise ValueError(f"unknown similarity {name!r} (expected SJ or SC)")

    @property
    def short(self) -> str:
        return "SJ" if self.kind == JACCARD else "SC"

    def from_counts(self, inter, size_a, size_b):
        """Vectorised similarity given intersection and set sizes.

        ``size_a`` is the size of the query set; for SetCosine with
        alpha != 0.5 the measure is asymmetric.
        """
        inter = np.asarray(inter, dtype=np.float64)
        size_a = np.asarray(size_a, dtype=np.float64)
        size_b = np.asarray(size_b, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == JACCARD:
                den = size_a + size_b - inter
            else:
                den = size_a**self.alpha * size_b ** (1.0 - self.alpha)
            out = np.where(den > 0, inter / den, 0.0)
        return out


SET_JACCARD = SimilarityKind(JACCARD)
SET_COSINE = SimilarityKind(COSINE)


def set_jaccard(a: Collection, b: Collection) -> float:
    a, b = set(a), set(b)
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def set_cosine(a: Collection, b: Collection, alpha: float = 0.5) -> float:
    a, b = set(a), set(b)
    if not a or not b:
        return 0.0
    return len(a & b) / (len(a) ** alpha * len(b) ** (1.0 - alpha))
