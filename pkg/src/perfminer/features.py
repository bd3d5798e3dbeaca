"""Tokenization and hashed unigram/bigram features."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError

DEFAULT_DIM = 1 << 18
MIN_DIM = 1 << 10

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_SPLIT_RE = re.compile(r"[^a-z0-9_]+")


def tokenize(message: str) -> list[str]:
    """Lowercase and split on every run of characters outside ``[a-z0-9_]``."""
    return [t for t in _SPLIT_RE.split(message.lower()) if t]


@lru_cache(maxsize=1 << 16)
def fnv1a_64(text: str) -> int:
    h = FNV64_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def check_dim(dim: int) -> None:
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < MIN_DIM or dim & (dim - 1):
        raise ConfigError(f"feature dim must be a power of two >= {MIN_DIM}, got {dim!r}")


@dataclass(frozen=True)
class SparseFeatureVector:
    dim: int
    entries: dict[int, float]

    def __len__(self) -> int:
        return len(self.entries)

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.entries.values()))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Indices and values as numpy arrays, in insertion order."""
        idx = np.fromiter(self.entries.keys(), dtype=np.int64, count=len(self.entries))
        val = np.fromiter(self.entries.values(), dtype=np.float64, count=len(self.entries))
        return idx, val


def feature_strings(tokens: list[str]) -> list[str]:
    feats = list(tokens)
    feats.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return feats


def hash_features(tokens: list[str], dim: int = DEFAULT_DIM) -> SparseFeatureVector:
    check_dim(dim)
    counts: dict[int, float] = {}
    for feat in feature_strings(tokens):
        i = fnv1a_64(feat) % dim
        counts[i] = counts.get(i, 0.0) + 1.0
    if counts:
        norm = math.sqrt(sum(c * c for c in counts.values()))
        counts = {i: c / norm for i, c in counts.items()}
    return SparseFeatureVector(dim, counts)


def featurize(message: str, dim: int = DEFAULT_DIM) -> SparseFeatureVector:
    return hash_features(tokenize(message), dim)
