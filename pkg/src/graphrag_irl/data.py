"""Interaction-log ingest, activity filtering, leave-last-two-out splits and
seeded negative sampling."""

from __future__ import annotations

import csv
import logging
import operator
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .errors import DataError
from .seeding import derive_seed

log = logging.getLogger(__name__)

ItemId = Any
UserId = Any


@dataclass(frozen=True, order=True)
class Interaction:
    user_id: UserId
    item_id: ItemId
    feedback: float
    timestamp: float

    def __post_init__(self):
        if not np.isfinite(self.feedback):
            raise ValueError(f"non-finite feedback {self.feedback!r}")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp!r}")


@dataclass(frozen=True)
class ItemMeta:
    item_id: ItemId
    title: str = ""
    categories: frozenset[str] = frozenset()
    tags: tuple[str, ...] = ()


_OPS: dict[str, Callable[[Any, Any], Any]] = {
    ">=": operator.ge,
    ">": operator.gt,
    "==": operator.eq,
    "<=": operator.le,
    "<": operator.lt,
}


@dataclass(frozen=True)
class PositivePredicate:
    """Threshold rule deciding whether a feedback value is a positive."""

    op: str = ">="
    threshold: float = 4.0

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown predicate operator {self.op!r}")

    def __call__(self, feedback):
        return _OPS[self.op](feedback, self.threshold)

    def describe(self) -> str:
        return f"feedback {self.op} {self.threshold:g}"


@dataclass
class DatasetConfig:
    """Declarative dataset descriptor.

    ``format`` is ``"movielens"`` (a directory holding ratings.csv,
    movies.csv and optionally tags.csv) or ``"log"`` (a delimited
    interaction log with a column mapping, plus an optional item-feature
    file).
    """

    name: str = "movielens"
    format: str = "movielens"
    path: str = "data/ml-latest-small"
    # "log" format only
    interactions_file: str = ""
    items_file: str = ""
    delimiter: str = ","
    columns: dict[str, str] = field(
        default_factory=lambda: {"user": "user_id", "item": "item_id",
                                 "feedback": "feedback", "timestamp": "timestamp"}
    )
    timestamp_divisor: float = 1.0
    item_columns: dict[str, str] = field(
        default_factory=lambda: {"item": "item_id", "title": "", "categories": "tag", "tags": ""}
    )
    category_sep: str = ","
    tag_sep: str = "|"
    # filtering
    min_user_interactions: int = 20
    min_item_interactions: int = 10
    min_user_positives: int = 3
    positive_op: str = ">="
    positive_threshold: float = 4.0
    filter_mode: str = "one_pass"
    # candidate sets
    n_neg: int = 99
    seed: int = 42

    @property
    def positive(self) -> PositivePredicate:
        return PositivePredicate(self.positive_op, self.positive_threshold)


@dataclass
class RawLog:
    interactions: list[Interaction]
    items: dict[ItemId, ItemMeta]

    def stats(self) -> dict[str, int]:
        return {
            "interactions": len(self.interactions),
            "users": len({x.user_id for x in self.interactions}),
            "items": len({x.item_id for x in self.interactions}),
        }


# ---------------------------------------------------------------------------
# parsing

def _parse_id(raw: str) -> ItemId:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        return raw


def _read_rows(path: Path, delimiter: str = ",") -> tuple[list[str], Iterable[tuple[int, list[str]]]]:
    if not path.exists():
        raise DataError(f"missing input file: {path}")
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        return [], iter(())
    header = [h.strip().lstrip("﻿") for h in header]

    def rows():
        with fh:
            for row in reader:
                if not row or all(not c.strip() for c in row):
                    continue
                yield reader.line_num, row

    return header, rows()


def _column(header: list[str], name: str, path: Path) -> int:
    try:
        return header.index(name)
    except ValueError:
        raise DataError(f"{path}: header lacks required column {name!r} (found {header})") from None


def _field(row: list[str], idx: int, name: str, conv, path: Path, line: int):
    try:
        return conv(row[idx])
    except (IndexError, ValueError) as exc:
        value = row[idx] if idx < len(row) else "<missing>"
        raise DataError(f"{path}:{line}: bad value {value!r} in field {name!r}") from exc


def _finite_float(raw: str) -> float:
    v = float(raw)
    if not np.isfinite(v):
        raise ValueError("not finite")
    return v


def _timestamp(divisor: float):
    def conv(raw: str) -> float:
        v = float(raw) / divisor
        if not np.isfinite(v) or v < 0:
            raise ValueError("bad timestamp")
        return int(v) if float(v).is_integer() else v
    return conv


def _read_log(path: Path, delimiter: str, columns: Mapping[str, str], divisor: float) -> list[Interaction]:
    header, rows = _read_rows(path, delimiter)
    idx = {k: _column(header, columns[k], path) for k in ("user", "item", "feedback", "timestamp")}
    ts_conv = _timestamp(divisor)
    out = []
    for line, row in rows:
        out.append(Interaction(
            _field(row, idx["user"], columns["user"], _parse_id, path, line),
            _field(row, idx["item"], columns["item"], _parse_id, path, line),
            _field(row, idx["feedback"], columns["feedback"], _finite_float, path, line),
            _field(row, idx["timestamp"], columns["timestamp"], ts_conv, path, line),
        ))
    return out


def _load_movielens(root: Path) -> tuple[list[Interaction], dict[ItemId, ItemMeta]]:
    interactions = _read_log(root / "ratings.csv", ",",
                             {"user": "userId", "item": "movieId", "feedback": "rating",
                              "timestamp": "timestamp"}, 1.0)
    titles: dict[ItemId, str] = {}
    cats: dict[ItemId, frozenset[str]] = {}
    movies = root / "movies.csv"
    if movies.exists():
        header, rows = _read_rows(movies)
        i_id, i_title, i_genres = (_column(header, c, movies) for c in ("movieId", "title", "genres"))
        for line, row in rows:
            item = _field(row, i_id, "movieId", _parse_id, movies, line)
            titles[item] = _field(row, i_title, "title", str, movies, line)
            genres = _field(row, i_genres, "genres", str, movies, line)
            cats[item] = frozenset(g.strip() for g in genres.split("|") if g.strip())
    tags: dict[ItemId, list[str]] = defaultdict(list)
    tag_path = root / "tags.csv"
    if tag_path.exists():
        header, rows = _read_rows(tag_path)
        i_item, i_tag = _column(header, "movieId", tag_path), _column(header, "tag", tag_path)
        for line, row in rows:
            item = _field(row, i_item, "movieId", _parse_id, tag_path, line)
            tags[item].append(_field(row, i_tag, "tag", str, tag_path, line))
    items = {
        item: ItemMeta(item, titles.get(item, ""), cats.get(item, frozenset()), tuple(tags.get(item, ())))
        for item in set(titles) | set(tags)
    }
    return interactions, items


def _load_item_features(cfg: DatasetConfig, root: Path) -> dict[ItemId, ItemMeta]:
    if not cfg.items_file:
        return {}
    path = root / cfg.items_file
    header, rows = _read_rows(path, cfg.delimiter)
    cols = cfg.item_columns
    i_item = _column(header, cols["item"], path)
    i_title = _column(header, cols["title"], path) if cols.get("title") else None
    i_cat = _column(header, cols["categories"], path) if cols.get("categories") else None
    i_tag = _column(header, cols["tags"], path) if cols.get("tags") else None
    items = {}
    for line, row in rows:
        item = _field(row, i_item, cols["item"], _parse_id, path, line)
        title = row[i_title] if i_title is not None and i_title < len(row) else ""
        raw_cats = row[i_cat] if i_cat is not None and i_cat < len(row) else ""
        raw_tags = row[i_tag] if i_tag is not None and i_tag < len(row) else ""
        categories = frozenset(c.strip() for c in raw_cats.split(cfg.category_sep) if c.strip())
        tags = tuple(t.strip() for t in raw_tags.split(cfg.tag_sep) if t.strip())
        items[item] = ItemMeta(item, title, categories, tags)
    return items


def load_interactions(cfg: DatasetConfig) -> RawLog:
    """Parse the dataset named by ``cfg`` into interactions and item metadata.

    Interactions come back sorted by (timestamp, user, item). Items that
    were interacted with but have no metadata row are kept with empty
    metadata and a warning is logged.
    """
    root = Path(cfg.path)
    if cfg.format == "movielens":
        interactions, items = _load_movielens(root)
    elif cfg.format == "log":
        interactions = _read_log(root / cfg.interactions_file, cfg.delimiter, cfg.columns,
                                 cfg.timestamp_divisor)
        items = _load_item_features(cfg, root)
    else:
        raise DataError(f"unknown dataset format {cfg.format!r}")
    if not interactions:
        raise DataError("no interactions")
    interactions.sort(key=lambda x: (x.timestamp, x.user_id, x.item_id))
    missing = sorted({x.item_id for x in interactions} - set(items))
    if missing:
        log.warning("%d interacted items lack metadata; kept with empty metadata", len(missing))
        for item in missing:
            items[item] = ItemMeta(item)
    raw = RawLog(interactions, items)
    log.info("loaded %s: %s", cfg.name, raw.stats())
    return raw


# ---------------------------------------------------------------------------
# filtering

@dataclass
class FilteredDataset:
    interactions: tuple[Interaction, ...]  # sorted by (user, timestamp, item)
    items: dict[ItemId, ItemMeta]
    positive: PositivePredicate
    trajectories: dict[UserId, tuple[Interaction, ...]]

    @property
    def users(self) -> list[UserId]:
        return sorted(self.trajectories)

    @property
    def item_ids(self) -> list[ItemId]:
        return sorted(self.items)

    def by_user(self) -> dict[UserId, list[Interaction]]:
        out: dict[UserId, list[Interaction]] = defaultdict(list)
        for x in self.interactions:
            out[x.user_id].append(x)
        return dict(out)

    def stats(self) -> dict[str, int]:
        return {
            "users": len(self.trajectories),
            "items": len(self.items),
            "interactions": len(self.interactions),
            "positives": sum(len(t) for t in self.trajectories.values()),
        }


def _chrono_key(x: Interaction):
    return (x.timestamp, x.item_id)


def filter_dataset(
    raw: RawLog,
    min_user_interactions: int,
    min_item_interactions: int,
    min_user_positives: int,
    positive: PositivePredicate,
    mode: str = "one_pass",
) -> FilteredDataset:
    """Apply the item, user and min-positive filters.

    ``one_pass`` filters items by global count, then users by their
    post-item-filter count, then users by positive count, once each.
    ``fixpoint`` repeats that sequence until nothing changes.
    """
    if min(min_user_interactions, min_item_interactions, min_user_positives) < 0:
        raise ValueError("thresholds must be >= 0")
    if mode not in ("one_pass", "fixpoint"):
        raise ValueError(f"unknown filter mode {mode!r}")
    rows = list(raw.interactions)
    while True:
        n_before = len(rows)
        item_counts = Counter(x.item_id for x in rows)
        rows = [x for x in rows if item_counts[x.item_id] >= min_item_interactions]
        user_counts = Counter(x.user_id for x in rows)
        rows = [x for x in rows if user_counts[x.user_id] >= min_user_interactions]
        pos_counts = Counter(x.user_id for x in rows if positive(x.feedback))
        rows = [x for x in rows if pos_counts[x.user_id] >= min_user_positives]
        if mode == "one_pass" or len(rows) == n_before:
            break
    if not rows:
        raise DataError("all users were filtered out")
    rows.sort(key=lambda x: (x.user_id, x.timestamp, x.item_id))
    trajectories: dict[UserId, list[Interaction]] = {x.user_id: [] for x in rows}
    for x in rows:
        if positive(x.feedback):
            trajectories[x.user_id].append(x)
    kept_items = {x.item_id for x in rows}
    items = {i: raw.items.get(i, ItemMeta(i)) for i in sorted(kept_items)}
    return FilteredDataset(tuple(rows), items, positive,
                           {u: tuple(t) for u, t in trajectories.items()})


# ---------------------------------------------------------------------------
# split

@dataclass(frozen=True)
class UserSplit:
    train: tuple[Interaction, ...]
    val: Interaction
    test: Interaction


@dataclass
class Split:
    users: dict[UserId, UserSplit]
    excluded: list[UserId]

    def train_items(self, user: UserId) -> list[ItemId]:
        return [x.item_id for x in self.users[user].train]


def split_leave_last_two(dataset: FilteredDataset) -> Split:
    users: dict[UserId, UserSplit] = {}
    excluded = []
    for user in dataset.users:
        traj = sorted(dataset.trajectories[user], key=_chrono_key)
        if len(traj) < 3:
            excluded.append(user)
            continue
        users[user] = UserSplit(tuple(traj[:-2]), traj[-2], traj[-1])
    if excluded:
        log.info("split excluded %d users with < 3 positives", len(excluded))
    return Split(users, excluded)


# ---------------------------------------------------------------------------
# candidates

@dataclass(frozen=True)
class CandidateSet:
    positive: ItemId
    negatives: tuple[ItemId, ...]
    seed: int

    @property
    def items(self) -> list[ItemId]:
        return [self.positive, *self.negatives]


class NegativeSampler:
    """Uniform negative draws from each user's non-positive item pool."""

    def __init__(self, dataset: FilteredDataset):
        self.item_ids = dataset.item_ids
        self.index = {item: i for i, item in enumerate(self.item_ids)}
        n = len(self.item_ids)
        self._pools: dict[UserId, np.ndarray] = {}
        for user, traj in dataset.trajectories.items():
            mask = np.ones(n, dtype=bool)
            mask[[self.index[x.item_id] for x in traj]] = False
            self._pools[user] = np.flatnonzero(mask)

    def pool(self, user: UserId) -> np.ndarray:
        return self._pools[user]

    def draw(self, user: UserId, n_neg: int, seed: int) -> np.ndarray:
        """Item indices of ``n_neg`` distinct negatives for ``user``."""
        pool = self._pools[user]
        if len(pool) < n_neg:
            raise DataError(
                f"user {user!r}: only {len(pool)} eligible negatives, {n_neg} requested "
                f"(short by {n_neg - len(pool)})"
            )
        rng = np.random.default_rng(seed)
        return pool[rng.choice(len(pool), size=n_neg, replace=False)]


def sample_candidates(
    dataset: FilteredDataset,
    user: UserId,
    target_positive: ItemId,
    n_neg: int,
    rng_seed: int,
    sampler: NegativeSampler | None = None,
) -> CandidateSet:
    sampler = sampler or NegativeSampler(dataset)
    idx = sampler.draw(user, n_neg, rng_seed)
    return CandidateSet(target_positive, tuple(sampler.item_ids[i] for i in idx), rng_seed)


def evaluation_candidates(
    dataset: FilteredDataset, split: Split, n_neg: int, master_seed: int, stage: str,
    sampler: NegativeSampler | None = None,
) -> dict[UserId, CandidateSet]:
    """One candidate set per split user for ``stage`` in {"val", "test"}."""
    sampler = sampler or NegativeSampler(dataset)
    out = {}
    for user, us in split.users.items():
        target = us.val if stage == "val" else us.test
        seed = derive_seed(master_seed, "candidates", stage, user)
        out[user] = sample_candidates(dataset, user, target.item_id, n_neg, seed, sampler)
    return out

