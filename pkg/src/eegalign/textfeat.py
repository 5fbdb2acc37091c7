"""Frozen text featurizer and the clinical report section schema.

Reports are hashed bags of token bigrams (with boundary markers, so a
single-token text still produces features) projected to 256 dims by a
fixed seeded Gaussian matrix and unit-normalized. The featurizer never
receives gradients; its matrix is a pure function of the seed.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field

import numpy as np

SECTION_SCHEMA = ("clinical_history", "medications", "description", "impression")

FEATURE_DIM = 256
HASH_BUCKETS = 2048
FEATURIZER_SEED = 1381

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class ReportText:
    """Sectioned clinical report; concatenation follows the schema order."""

    sections: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.sections) - set(SECTION_SCHEMA)
        if unknown:
            raise ValueError(f"unknown report sections: {sorted(unknown)}")

    def text(self) -> str:
        return " ".join(self.sections[s] for s in SECTION_SCHEMA if s in self.sections)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class TextFeaturizer:
    """Deterministic report-to-vector map standing in for a frozen language model."""

    def __init__(self, dim: int = FEATURE_DIM, buckets: int = HASH_BUCKETS, seed: int = FEATURIZER_SEED):
        self.dim = dim
        self.buckets = buckets
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.projection = rng.normal(0.0, 1.0, (buckets, dim)) / np.sqrt(dim)

    def featurize_text(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise ValueError("cannot featurize empty text")
        counts = np.zeros(self.buckets)
        padded = ["<s>", *tokens, "</s>"]
        for a, b in zip(padded, padded[1:]):
            bucket = zlib.crc32(f"{a}\x1f{b}".encode()) % self.buckets
            counts[bucket] += 1.0
        vec = counts @ self.projection
        return vec / np.sqrt(vec @ vec)

    def featurize_report(self, report: ReportText) -> np.ndarray:
        return self.featurize_text(report.text())
