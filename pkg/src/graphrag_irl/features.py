"""Feature vectors phi(s, a) and z-score standardization.

Layout, for G categories (d = 2G + 8 with graph features, 2G + 4 without):

    [0, G)          user category distribution
    G               activity   log(1 + n_prior)
    G + 1           recency    min(days since last activity / 365, 1)
    [G + 2, 2G + 2) candidate category indicator
    2G + 2          popularity log(1 + count)
    2G + 3          cosine(user distribution, candidate indicator)
    2G + 4 ..       text similarity, community support, shared concepts,
                    community average feedback
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import ItemId, ItemMeta
from .graph import HeteroGraph, TextIndex, cosine, shared_concepts, text_similarity
from .retrieval import CommunitySignals, UserProfile, category_vector

GRAPH_FEATURES = ("text_similarity", "community_support", "shared_concepts", "community_avg_feedback")


@dataclass(frozen=True)
class FeatureLayout:
    categories: tuple[str, ...]
    graph_features: bool = True

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def d_base(self) -> int:
        g = self.n_categories
        return (g + 2) + (g + 1) + 1

    @property
    def d(self) -> int:
        return self.d_base + (4 if self.graph_features else 0)

    def names(self) -> list[str]:
        names = [f"user_cat:{c}" for c in self.categories] + ["activity", "recency"]
        names += [f"item_cat:{c}" for c in self.categories] + ["popularity", "category_cosine"]
        if self.graph_features:
            names += list(GRAPH_FEATURES)
        return names


def activity(n_prior: int) -> float:
    return math.log1p(n_prior)


def recency(delta_days: float) -> float:
    return min(delta_days / 365.0, 1.0)


def behavioral_features(layout: FeatureLayout, profile: UserProfile, n_prior: int,
                        delta_days: float, candidate: ItemMeta, popularity_count: int) -> np.ndarray:
    if n_prior < 0 or delta_days < 0 or popularity_count < 0:
        raise ValueError("n_prior, delta_days and popularity_count must be >= 0")
    dist = np.asarray(profile.category_distribution, dtype=float)
    indicator = category_vector(candidate, layout.categories, fractional=False)
    return np.concatenate([
        dist, [activity(n_prior), recency(delta_days)],
        indicator, [math.log1p(popularity_count)],
        [cosine(dist, indicator)],
    ])


def history_document(profile: UserProfile, documents: dict[ItemId, str]) -> str:
    """Aggregated text of the profile's recent positives."""
    return " ".join(documents.get(x.item_id, "") for x in profile.positive_history).strip()


def graph_features(history_doc: str, history_items: Iterable[ItemId], candidate: ItemId,
                   text_index: TextIndex, graph: HeteroGraph, signals: CommunitySignals) -> np.ndarray:
    return np.array([
        text_similarity(text_index, history_doc, candidate),
        signals.support,
        float(shared_concepts(graph, history_items, candidate)),
        signals.avg_feedback,
    ])


def assemble(layout: FeatureLayout, behavioral: np.ndarray, graph: np.ndarray | None = None) -> np.ndarray:
    if behavioral.shape != (layout.d_base,):
        raise ValueError(f"behavioral block has shape {behavioral.shape}, layout expects ({layout.d_base},)")
    parts = [behavioral]
    if layout.graph_features:
        if graph is None or graph.shape != (4,):
            raise ValueError("layout expects a 4-dim graph block")
        parts.append(graph)
    elif graph is not None:
        raise ValueError("graph features disabled in this layout")
    vec = np.concatenate(parts)
    if not np.all(np.isfinite(vec)):
        raise ValueError("feature vector contains NaN/Inf")
    return vec


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-8

    @classmethod
    def fit(cls, x: np.ndarray, eps: float = 1e-8) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64).reshape(-1, np.shape(x)[-1])
        if x.shape[0] == 0:
            raise ValueError("cannot fit a standardizer on an empty training set")
        mean = x.mean(axis=0)
        std = np.maximum(x.std(axis=0), eps)
        return cls(mean, std, eps)

    @classmethod
    def fit_batches(cls, batches: Iterable[np.ndarray], eps: float = 1e-8) -> "Standardizer":
        """Streaming fit (Chan et al. pairwise merge of mean/M2)."""
        n = 0
        mean = m2 = None
        for b in batches:
            b = np.asarray(b, dtype=np.float64).reshape(-1, np.shape(b)[-1])
            if b.shape[0] == 0:
                continue
            nb, mb = b.shape[0], b.mean(axis=0)
            m2b = ((b - mb) ** 2).sum(axis=0)
            if mean is None:
                n, mean, m2 = nb, mb, m2b
                continue
            delta = mb - mean
            tot = n + nb
            mean = mean + delta * nb / tot
            m2 = m2 + m2b + delta ** 2 * n * nb / tot
            n = tot
        if mean is None:
            raise ValueError("cannot fit a standardizer on an empty training set")
        return cls(mean, np.maximum(np.sqrt(m2 / n), eps), eps)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "eps": self.eps}


def feature_matrix(layout: FeatureLayout, rows: Sequence[np.ndarray]) -> np.ndarray:
    out = np.vstack(rows) if rows else np.zeros((0, layout.d))
    if out.shape[1] != layout.d:
        raise ValueError(f"dimension mismatch: got {out.shape[1]}, layout has d={layout.d}")
    return out
