"""Rank-level blending of LLM and IRL orderings, alpha tuning and the gate."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from ..data import ItemId, UserId
from ..evaluation import metrics_for_rank


def ranks_of(ordering: Sequence[ItemId]) -> dict[ItemId, int]:
    return {item: r for r, item in enumerate(ordering, start=1)}


def fuse(llm_ranks: Mapping[ItemId, int], irl_ranks: Mapping[ItemId, int], alpha: float) -> list[ItemId]:
    """Ascending alpha * rank_llm + (1 - alpha) * rank_irl; ties by IRL rank, then id.

    Scores are exact rationals so grid values like 0.3 cannot create spurious
    float ties or break real ones.
    """
    if set(llm_ranks) != set(irl_ranks):
        raise ValueError("LLM and IRL rankings cover different items")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    a = Fraction(repr(float(alpha)))
    return sorted(irl_ranks, key=lambda c: (a * llm_ranks[c] + (1 - a) * irl_ranks[c], irl_ranks[c], c))


def full_ordering(fused_shortlist: Sequence[ItemId], irl_ordering: Sequence[ItemId]) -> list[ItemId]:
    """Shortlist on top, every other candidate below it in IRL order."""
    head = set(fused_shortlist)
    return list(fused_shortlist) + [i for i in irl_ordering if i not in head]


@dataclass
class FusionCase:
    user_id: UserId
    irl_ordering: list[ItemId]  # all candidates, IRL order
    llm_ordering: list[ItemId]  # parsed permutation of the shortlist
    positive: ItemId

    @property
    def shortlist(self) -> list[ItemId]:
        return self.irl_ordering[: len(self.llm_ordering)]

    def ordering(self, alpha: float) -> list[ItemId]:
        fused = fuse(ranks_of(self.llm_ordering), ranks_of(self.shortlist), alpha)
        return full_ordering(fused, self.irl_ordering)

    def rank(self, alpha: float) -> int:
        return self.ordering(alpha).index(self.positive) + 1


def mean_ndcg(cases: Sequence[FusionCase], alpha: float, k: int = 10) -> float:
    cases = sorted(cases, key=lambda c: c.user_id)
    return sum(metrics_for_rank(c.rank(alpha), (k,))[f"ndcg@{k}"] for c in cases) / len(cases)


def tune_alpha(cases: Sequence[FusionCase], grid: Sequence[float]) -> tuple[float, dict[float, float]]:
    """Grid value with the best mean validation NDCG@10 (ties: smallest alpha)."""
    if not cases:
        raise ValueError("empty validation set")
    if not grid:
        raise ValueError("empty alpha grid")
    scores = {float(a): mean_ndcg(cases, a) for a in grid}
    best = min(scores, key=lambda a: (-scores[a], a))
    return best, scores


def boost_only_gate(enabled: bool, irl_ndcg_val: float, fused_ndcg_val: float) -> bool:
    """True when fusion should be applied at test time."""
    return (not enabled) or fused_ndcg_val >= irl_ndcg_val
