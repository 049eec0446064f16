"""Listwise re-ranking prompts.

Candidates are shown under short integer ids 1..N in IRL order; the
mapping back to catalog ids stays on the prompt object.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping

from ..data import ItemId, ItemMeta, UserId
from ..graph import top_tags
from ..ranker import ScoredShortlist
from ..retrieval import UserProfile


@dataclass(frozen=True)
class PromptCandidate:
    index: int
    item_id: ItemId
    title: str
    categories: tuple[str, ...]
    tags: tuple[str, ...]
    support: float
    confidence: str


@dataclass
class PersonaPrompt:
    user_id: UserId | None
    stage: str
    candidates: list[PromptCandidate]
    text: str
    plain: bool = False

    @property
    def ids(self) -> dict[int, ItemId]:
        return {c.index: c.item_id for c in self.candidates}

    @property
    def irl_order(self) -> list[ItemId]:
        return [c.item_id for c in self.candidates]

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def _title(items: Mapping[ItemId, ItemMeta], item: ItemId) -> str:
    meta = items.get(item)
    return meta.title if meta is not None and meta.title else f"item {item}"


def _persona_lines(profile: UserProfile | None, items: Mapping[ItemId, ItemMeta]) -> list[str]:
    if profile is None or profile.n_history == 0:
        return ["The user has no history yet."]
    lines = []
    top = profile.top_categories(5)
    if top:
        lines.append("Favourite categories: " + ", ".join(f"{c} ({p:.2f})" for c, p in top))
    recent = profile.positive_history
    lines.append(f"Recently liked ({len(recent)}, oldest first):")
    return lines + [f"- {_title(items, x.item_id)}" for x in recent]


def build_prompt(
    profile: UserProfile | None,
    support: Mapping[ItemId, float],
    shortlist: ScoredShortlist,
    items: Mapping[ItemId, ItemMeta],
    plain: bool = False,
    prompt_tags: int = 5,
    user_id: UserId | None = None,
    stage: str = "",
) -> PersonaPrompt:
    """Deterministic prompt text for one user's shortlist."""
    if len(shortlist) == 0:
        raise ValueError("empty shortlist")
    cands = []
    for k, e in enumerate(shortlist.entries, start=1):
        meta = items.get(e.item_id, ItemMeta(e.item_id))
        cands.append(PromptCandidate(k, e.item_id, _title(items, e.item_id),
                                     tuple(sorted(meta.categories)), tuple(top_tags(meta, prompt_tags)),
                                     float(support.get(e.item_id, 0.0)), e.confidence))
    n = len(cands)
    out = ["You are ranking items for a recommender system."]
    if not plain:
        out += ["", "## User"] + _persona_lines(profile, items)
        out += ["", "## Similar users",
                "Share of similar users who liked each candidate:"]
        out += [f"[{c.index}] {c.support:.2f}" for c in cands]
    out += ["", "## Candidates"]
    for c in cands:
        cats = ", ".join(c.categories) if c.categories else "none"
        line = f"[{c.index}] {c.title} | categories: {cats}"
        if c.tags:
            line += " | tags: " + ", ".join(c.tags)
        out.append(line)
    if not plain:
        out += ["", "## Model confidence",
                "Confidence of the upstream ranking model for each candidate:"]
        out += [f"[{c.index}] {c.confidence}" for c in cands]
    out += ["", "## Task",
            f"Order all {n} candidates from most to least likely to be chosen next.",
            f"Reply with a JSON list containing each of the numbers 1 to {n} exactly once, e.g. [2, 1, 3]."]
    return PersonaPrompt(user_id, stage, cands, "\n".join(out) + "\n", plain)
