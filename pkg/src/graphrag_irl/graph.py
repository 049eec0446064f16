"""Heterogeneous item/category/concept graph and a TF-IDF text index."""

from __future__ import annotations

import json
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .data import ItemId, ItemMeta

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"[^\W_]+")


def normalize_tag(tag: str) -> str:
    return _WS.sub(" ", tag.strip().lower())


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN.findall(text.lower()) if len(t) > 1]


def top_tags(item: ItemMeta, k: int) -> list[str]:
    """The ``k`` most frequent normalized tags, ties broken alphabetically."""
    if k <= 0:
        return []
    counts = Counter(normalize_tag(t) for t in item.tags if normalize_tag(t))
    return [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def item_document(item: ItemMeta, top_tags_k: int = 10) -> str:
    parts = [item.title, *sorted(item.categories), *top_tags(item, top_tags_k)]
    return _WS.sub(" ", " ".join(parts).lower()).strip()


# ---------------------------------------------------------------------------
# graph

@dataclass
class HeteroGraph:
    item_nodes: set[ItemId] = field(default_factory=set)
    category_nodes: set[str] = field(default_factory=set)
    concept_nodes: set[str] = field(default_factory=set)
    edges_item_category: set[tuple[ItemId, str]] = field(default_factory=set)
    edges_item_concept: set[tuple[ItemId, str]] = field(default_factory=set)
    edges_item_item: set[tuple[ItemId, ItemId]] = field(default_factory=set)

    def __post_init__(self):
        self._concepts_of: dict[ItemId, frozenset[str]] | None = None

    def concepts_of(self, item: ItemId) -> frozenset[str]:
        if self._concepts_of is None:
            acc: dict[ItemId, set[str]] = defaultdict(set)
            for i, c in self.edges_item_concept:
                acc[i].add(c)
            self._concepts_of = {i: frozenset(cs) for i, cs in acc.items()}
        return self._concepts_of.get(item, frozenset())

    def stats(self) -> dict:
        nodes = {"item": len(self.item_nodes), "category": len(self.category_nodes),
                 "concept": len(self.concept_nodes)}
        edges = {"item_category": len(self.edges_item_category),
                 "item_concept": len(self.edges_item_concept),
                 "item_item": len(self.edges_item_item)}
        return {"nodes": nodes, "edges": edges,
                "total_nodes": sum(nodes.values()), "total_edges": sum(edges.values())}

    def check(self) -> None:
        """Raise AssertionError if any edge endpoint is missing from its node set."""
        for i, c in self.edges_item_category:
            assert i in self.item_nodes and c in self.category_nodes, (i, c)
        for i, c in self.edges_item_concept:
            assert i in self.item_nodes and c in self.concept_nodes, (i, c)
        for a, b in self.edges_item_item:
            assert a in self.item_nodes and b in self.item_nodes and a != b, (a, b)

    # line format: "N <type>\t<json id>" / "E <type>\t<json a>\t<json b>"
    def dump(self, path: str | Path) -> None:
        lines = ["# graphrag-irl heterograph v1"]
        for kind, nodes in (("item", self.item_nodes), ("category", self.category_nodes),
                            ("concept", self.concept_nodes)):
            lines += [f"N {kind}\t{json.dumps(n)}" for n in sorted(nodes)]
        for kind, edges in (("item_category", self.edges_item_category),
                            ("item_concept", self.edges_item_concept),
                            ("item_item", self.edges_item_item)):
            lines += [f"E {kind}\t{json.dumps(a)}\t{json.dumps(b)}" for a, b in sorted(edges)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "HeteroGraph":
        g = cls()
        nodes = {"item": g.item_nodes, "category": g.category_nodes, "concept": g.concept_nodes}
        edges = {"item_category": g.edges_item_category, "item_concept": g.edges_item_concept,
                 "item_item": g.edges_item_item}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line or line.startswith("#"):
                continue
            head, *fields = line.split("\t")
            tag, kind = head.split(" ", 1)
            if tag == "N":
                nodes[kind].add(json.loads(fields[0]))
            else:
                edges[kind].add((json.loads(fields[0]), json.loads(fields[1])))
        return g


def concept_frequencies(items: Mapping[ItemId, ItemMeta]) -> Counter:
    freq: Counter = Counter()
    for meta in items.values():
        for t in meta.tags:
            nt = normalize_tag(t)
            if nt:
                freq[nt] += 1
    return freq


def _item_item_edges(concepts_of: Mapping[ItemId, frozenset[str]]) -> set[tuple[ItemId, ItemId]]:
    by_concept: dict[str, list[ItemId]] = defaultdict(list)
    for item in sorted(concepts_of):
        for c in concepts_of[item]:
            by_concept[c].append(item)
    shared: Counter = Counter()
    for members in by_concept.values():
        for pair in combinations(members, 2):
            shared[pair] += 1
    return {pair for pair, n in shared.items() if n >= 2}


def build_graph(items: Mapping[ItemId, ItemMeta], min_concept_freq: int = 5) -> HeteroGraph:
    """Build the graph over ``items``.

    Concept nodes are normalized tags whose tag-application count across
    ``items`` reaches ``min_concept_freq``; two items are linked when they
    share at least two concept nodes.
    """
    if min_concept_freq < 1:
        raise ValueError("min_concept_freq must be >= 1")
    freq = concept_frequencies(items)
    concepts = {c for c, n in freq.items() if n >= min_concept_freq}
    g = HeteroGraph(item_nodes=set(items))
    concepts_of: dict[ItemId, frozenset[str]] = {}
    for item, meta in items.items():
        for cat in meta.categories:
            g.category_nodes.add(cat)
            g.edges_item_category.add((item, cat))
        cs = frozenset(normalize_tag(t) for t in meta.tags) & concepts
        if cs:
            concepts_of[item] = cs
            g.edges_item_concept.update((item, c) for c in cs)
    g.concept_nodes = set(concepts)
    g.edges_item_item = _item_item_edges(concepts_of)
    return g


def threshold_sweep(items: Mapping[ItemId, ItemMeta], thresholds: Iterable[int] = range(2, 11)) -> dict[int, int]:
    """Concept-node count for each candidate threshold."""
    freq = concept_frequencies(items)
    return {t: sum(1 for n in freq.values() if n >= t) for t in thresholds}


def calibrate_threshold(sweep: Mapping[int, int], target: int) -> int:
    """Threshold whose concept count is closest to ``target`` (ties: smaller threshold)."""
    return min(sweep, key=lambda t: (abs(sweep[t] - target), t))


def shared_concepts(graph: HeteroGraph, history_items: Iterable[ItemId], candidate: ItemId) -> int:
    union: set[str] = set()
    for item in history_items:
        union |= graph.concepts_of(item)
    return len(union & graph.concepts_of(candidate))


# ---------------------------------------------------------------------------
# text index

@dataclass
class TextIndex:
    """tf = raw count, idf = ln((1+N)/(1+df)) + 1, rows L2-normalized."""

    vocabulary: dict[str, int]
    idf: np.ndarray
    item_ids: list[ItemId]
    doc_vectors: sp.csr_matrix  # one row per item_ids entry
    counts: sp.csr_matrix  # raw term counts, same layout

    def __post_init__(self):
        self.row = {item: i for i, item in enumerate(self.item_ids)}

    def term_counts(self, text: str) -> sp.csr_matrix:
        toks = Counter(t for t in tokenize(text) if t in self.vocabulary)
        cols = [self.vocabulary[t] for t in sorted(toks)]
        vals = [float(toks[t]) for t in sorted(toks)]
        return sp.csr_matrix((vals, ([0] * len(cols), cols)), shape=(1, len(self.vocabulary)))

    def vectorize(self, text: str) -> sp.csr_matrix:
        return weight_rows(self.term_counts(text), self.idf)

    def vector(self, item: ItemId) -> sp.csr_matrix:
        return self.doc_vectors[self.row[item]]


def weight_rows(counts: sp.csr_matrix, idf: np.ndarray) -> sp.csr_matrix:
    """tf-idf weight and L2-normalize each row; zero rows stay zero."""
    m = sp.csr_matrix(counts.multiply(idf[None, :]), dtype=np.float64)
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    return sp.csr_matrix(sp.diags(1.0 / norms) @ m)


def build_text_index(documents: Mapping[ItemId, str]) -> TextIndex:
    item_ids = sorted(documents)
    toks = [Counter(tokenize(documents[i])) for i in item_ids]
    vocab_list = sorted(set().union(*toks)) if toks else []
    vocab = {t: j for j, t in enumerate(vocab_list)}
    rows, cols, vals = [], [], []
    for r, c in enumerate(toks):
        for t in sorted(c):
            rows.append(r)
            cols.append(vocab[t])
            vals.append(float(c[t]))
    counts = sp.csr_matrix((vals, (rows, cols)), shape=(len(item_ids), len(vocab)))
    n = len(item_ids)
    df = np.asarray((counts > 0).sum(axis=0)).ravel()
    idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
    return TextIndex(vocab, idf, item_ids, weight_rows(counts, idf), counts)


def text_similarity(index: TextIndex, query_doc: str, item_id: ItemId) -> float:
    if item_id not in index.row:
        raise KeyError(f"item {item_id!r} is not in the text index")
    q = index.vectorize(query_doc)
    v = index.vector(item_id)
    if q.nnz == 0 or v.nnz == 0:
        return 0.0
    return float(q.multiply(v).sum())


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)
