"""Individual and community context retrieval.

The per-call functions (``build_profile``, ``find_community``,
``community_signals``) are the reference semantics. ``CommunityIndex``
computes the same quantities for every (user, item) pair at once and is
what the training loop uses.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Interaction, ItemId, ItemMeta, PositivePredicate, UserId
from .graph import HeteroGraph, normalize_tag, shared_concepts


@dataclass
class UserProfile:
    categories: tuple[str, ...]
    category_distribution: np.ndarray
    positive_history: list[Interaction]  # the K most recent, chronological
    concept_affinity: Counter = field(default_factory=Counter)
    history_items: tuple[ItemId, ...] = ()  # full positive history
    n_history: int = 0

    def top_categories(self, k: int = 5) -> list[tuple[str, float]]:
        order = sorted(range(len(self.categories)),
                       key=lambda j: (-self.category_distribution[j], self.categories[j]))
        return [(self.categories[j], float(self.category_distribution[j]))
                for j in order[:k] if self.category_distribution[j] > 0]


def category_vector(meta: ItemMeta, categories: Sequence[str], fractional: bool = True) -> np.ndarray:
    """Indicator over ``categories``; fractional mode spreads unit mass."""
    vec = np.zeros(len(categories))
    idx = [j for j, c in enumerate(categories) if c in meta.categories]
    if idx:
        vec[idx] = 1.0 / len(idx) if fractional else 1.0
    return vec


def build_profile(
    history: Iterable[Interaction],
    as_of_time: float,
    items: Mapping[ItemId, ItemMeta],
    categories: Sequence[str],
    k_recent: int = 10,
    graph: HeteroGraph | None = None,
) -> UserProfile:
    """Profile from the positives in ``history`` with timestamp < ``as_of_time``."""
    past = sorted((x for x in history if x.timestamp < as_of_time),
                  key=lambda x: (x.timestamp, x.item_id))
    dist = np.zeros(len(categories))
    affinity: Counter = Counter()
    for x in past:
        meta = items.get(x.item_id, ItemMeta(x.item_id))
        dist += category_vector(meta, categories)
        if graph is not None:
            affinity.update(graph.concepts_of(x.item_id))
        else:
            affinity.update(normalize_tag(t) for t in meta.tags)
    total = dist.sum()
    if total > 0:
        dist = dist / total
    recent = past[-k_recent:] if k_recent > 0 else []
    return UserProfile(tuple(categories), dist, recent, affinity,
                       tuple(x.item_id for x in past), len(past))


# ---------------------------------------------------------------------------
# communities

@dataclass
class Community:
    user_id: UserId
    members: list[tuple[UserId, float]]


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), 0.0, 1.0))


def find_community(user_id: UserId, profile: np.ndarray,
                   all_profiles: Mapping[UserId, np.ndarray], m: int = 50) -> Community:
    """Top-``m`` other users by cosine of category distributions.

    A user with an all-zero profile gets an empty community.
    """
    if m < 1:
        raise ValueError("M must be >= 1")
    if not np.any(profile):
        return Community(user_id, [])
    sims = [(other, _cos(profile, vec)) for other, vec in all_profiles.items() if other != user_id]
    sims.sort(key=lambda t: (-t[1], t[0]))
    return Community(user_id, sims[:m])


@dataclass(frozen=True)
class CommunitySignals:
    support: float
    avg_feedback: float
    shared_concept_count: int


def community_signals(
    community: Community,
    candidate: ItemId,
    member_feedback: Mapping[UserId, Mapping[ItemId, float]],
    positive: PositivePredicate,
    global_mean_feedback: float,
    graph: HeteroGraph | None = None,
    history_items: Iterable[ItemId] = (),
) -> CommunitySignals:
    """Signals for ``candidate``.

    ``member_feedback`` maps each user to their training-period feedback
    per item. ``avg_feedback`` is the similarity-weighted mean over members
    who interacted with the candidate, falling back to the global mean when
    none did (or when all of their similarities are zero).
    """
    members = community.members
    hits = 0
    num = den = 0.0
    for member, sim in members:
        fb = member_feedback.get(member, {}).get(candidate)
        if fb is None:
            continue
        if positive(fb):
            hits += 1
        num += sim * fb
        den += sim
    support = hits / len(members) if members else 0.0
    avg = num / den if den > 0 else global_mean_feedback
    shared = shared_concepts(graph, history_items, candidate) if graph is not None else 0
    return CommunitySignals(support, avg, shared)


class CommunityIndex:
    """Dense user x item support and weighted-feedback tables.

    ``profiles`` is a (U, G) matrix in ``user_ids`` order; ``feedback`` and
    ``interacted`` are (U, I) training-period matrices in ``item_ids`` order.
    """

    def __init__(self, user_ids: Sequence[UserId], profiles: np.ndarray, feedback: np.ndarray,
                 interacted: np.ndarray, positive: PositivePredicate, global_mean: float, m: int = 50):
        self.user_ids = list(user_ids)
        self.m = m
        self.global_mean = global_mean
        n = len(self.user_ids)
        norms = np.linalg.norm(profiles, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        unit = profiles / safe[:, None]
        sim = np.clip(unit @ unit.T, 0.0, 1.0)
        # rank by (-sim, user id); user_ids are sorted so column index is the tie key
        weights = np.zeros((n, n))
        members = np.zeros((n, n))
        self.members: list[list[tuple[UserId, float]]] = []
        for u in range(n):
            if norms[u] == 0:
                self.members.append([])
                continue
            s = sim[u].copy()
            s[u] = -np.inf
            order = np.lexsort((np.arange(n), -s))[: min(m, n - 1)]
            weights[u, order] = sim[u, order]
            members[u, order] = 1.0
            self.members.append([(self.user_ids[v], float(sim[u, v])) for v in order])
        pos = np.where(interacted > 0, positive(feedback), False).astype(float)
        counts = members.sum(axis=1)
        self.support = (members @ pos) / np.where(counts > 0, counts, 1.0)[:, None]
        num = weights @ (feedback * interacted)
        den = weights @ interacted
        self.avg_feedback = np.where(den > 0, num / np.where(den > 0, den, 1.0), global_mean)

    def community(self, u: int) -> Community:
        return Community(self.user_ids[u], self.members[u])

    def dump(self, path: str | Path, key: str) -> None:
        lines = [f"# community cache key={key} m={self.m}"]
        for uid, mem in zip(self.user_ids, self.members):
            lines.append(f"{uid}\t" + ",".join(f"{v}:{s:.17g}" for v, s in mem))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_community_cache(path: str | Path, key: str) -> dict[str, list[tuple[str, float]]] | None:
    """Read a cache written by ``CommunityIndex.dump``; None on key mismatch."""
    p = Path(path)
    if not p.exists():
        return None
    lines = p.read_text(encoding="utf-8").splitlines()
    if not lines or f"key={key} " not in lines[0] + " ":
        return None
    out = {}
    for line in lines[1:]:
        uid, _, rest = line.partition("\t")
        out[uid] = [(v, float(s)) for v, s in (kv.rsplit(":", 1) for kv in rest.split(",") if kv)]
    return out
