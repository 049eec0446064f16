"""Turn a free-text model reply into a full permutation of the shortlist."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from ..data import ItemId

_BRACKETS = re.compile(r"\[([^\[\]]*)\]")
_INT = re.compile(r"\d+")
_MAX_DIGITS = 6

PARSE_FAILURE = "parse_failure"
REPAIRED = "repaired"
PROVIDER_ERROR = "provider_error"


@dataclass
class RankedResponse:
    ordering: list[ItemId]
    fallback_reason: str | None = None
    n_parsed: int = 0  # valid distinct ids recovered from the reply

    def ranks(self) -> dict[ItemId, int]:
        return {item: r for r, item in enumerate(self.ordering, start=1)}


def _ints(text: str) -> list[int | None]:
    # over-long digit runs are junk, kept as None so they count as dropped
    return [int(m) if len(m) <= _MAX_DIGITS else None for m in _INT.findall(text)]


def extract_indices(raw: str) -> list[int | None]:
    """Integers from the longest bracketed list, else from the whole text.

    A bracket list only counts when it holds at least two numbers, so a reply
    that labels items as "[3] ..., [1] ..." falls through to the full scan.
    """
    best: list[int | None] = []
    for m in _BRACKETS.finditer(raw):
        nums = _ints(m.group(1))
        if len(nums) > len(best):
            best = nums
    return best if len(best) >= 2 else _ints(raw)


def parse_ranking(raw: object, irl_order: Sequence[ItemId]) -> RankedResponse:
    """Map 1-based indices in ``raw`` onto ``irl_order`` and repair.

    Out-of-range ids are dropped, repeated ids keep their first position and
    ids the reply never mentions follow in IRL order. A reply with no usable
    id at all becomes the IRL order tagged ``parse_failure``.
    """
    irl_order = list(irl_order)
    n = len(irl_order)
    if not isinstance(raw, str):
        return RankedResponse(irl_order, PARSE_FAILURE)
    seen: list[int] = []
    dirty = False
    for k in extract_indices(raw):
        if k is None or not 1 <= k <= n or k in seen:
            dirty = True
            continue
        seen.append(k)
    if not seen:
        return RankedResponse(irl_order, PARSE_FAILURE)
    taken = set(seen)
    missing = [k for k in range(1, n + 1) if k not in taken]
    ordering = [irl_order[k - 1] for k in seen + missing]
    reason = REPAIRED if dirty or missing else None
    return RankedResponse(ordering, reason, len(seen))


def format_ranking(ordering: Sequence[ItemId], irl_order: Sequence[ItemId]) -> str:
    """Reply text that ``parse_ranking`` maps back to ``ordering``."""
    pos = {item: k for k, item in enumerate(irl_order, start=1)}
    return "[" + ", ".join(str(pos[i]) for i in ordering) + "]"
