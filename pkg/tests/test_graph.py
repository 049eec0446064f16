from __future__ import annotations

import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphrag_irl.data import ItemMeta
from graphrag_irl.graph import (HeteroGraph, build_graph, build_text_index, calibrate_threshold, item_document,
                                normalize_tag, shared_concepts, text_similarity, threshold_sweep, tokenize)


def _items(tagsets: dict[int, list[str]], cats=None) -> dict[int, ItemMeta]:
    cats = cats or {}
    return {i: ItemMeta(i, f"T{i}", frozenset(cats.get(i, ["Drama"])), tuple(ts)) for i, ts in tagsets.items()}


def test_normalize_and_tokenize():
    assert normalize_tag("  Twist   Ending ") == "twist ending"
    assert tokenize("Heat (1995) - A.I. x-men") == ["heat", "1995", "men"]


def test_item_document_examples():
    heat = ItemMeta(1, "Heat", frozenset({"Action", "Crime"}), ("heist", "heist", "Heist", "pacino"))
    assert set(item_document(heat, 1).split()) == {"heat", "action", "crime", "heist"}
    assert item_document(ItemMeta(2), 10) == ""
    assert item_document(heat, 0) == "heat action crime"


def test_graph_without_tags():
    g = build_graph(_items({1: [], 2: []}), 1)
    assert g.concept_nodes == set() and g.edges_item_item == set()
    assert g.category_nodes == {"Drama"}


def test_two_shared_concepts_make_an_edge_one_does_not():
    g = build_graph(_items({1: ["a", "b"], 2: ["a", "b"], 3: ["a", "c"], 4: ["c"]}), 1)
    assert g.edges_item_item == {(1, 2)}
    g.check()


def test_concept_threshold_counts_applications():
    g = build_graph(_items({1: ["x", "X ", "y"], 2: ["y"], 3: ["z"]}), 2)
    assert g.concept_nodes == {"x", "y"}
    assert (1, "x") in g.edges_item_concept and (3, "z") not in g.edges_item_concept


def _brute_edges(items, thr):
    freq = {}
    for m in items.values():
        for t in m.tags:
            freq[normalize_tag(t)] = freq.get(normalize_tag(t), 0) + 1
    keep = {c for c, n in freq.items() if n >= thr}
    cs = {i: {normalize_tag(t) for t in m.tags} & keep for i, m in items.items()}
    return {(a, b) for a, b in combinations(sorted(items), 2) if len(cs[a] & cs[b]) >= 2}, keep


tagset = st.lists(st.sampled_from(list("abcdefg")), max_size=5)


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.integers(0, 150), tagset, max_size=40), st.integers(1, 4))
def test_item_item_edges_match_bruteforce(tags, thr):
    items = _items(tags)
    g = build_graph(items, thr)
    edges, keep = _brute_edges(items, thr)
    assert g.edges_item_item == edges and g.concept_nodes == keep
    g.check()
    g2 = build_graph(items, thr + 1)
    assert len(g2.concept_nodes) <= len(g.concept_nodes)
    assert len(g2.edges_item_item) <= len(g.edges_item_item)


def test_sweep_and_calibration():
    items = _items({1: ["a"] * 5 + ["b"] * 3, 2: ["c"] * 2})
    sweep = threshold_sweep(items, range(2, 7))
    assert sweep == {2: 3, 3: 2, 4: 1, 5: 1, 6: 0}
    assert calibrate_threshold(sweep, 2) == 3
    assert calibrate_threshold(sweep, 1) == 4  # tie between 4 and 5 goes low


def test_dump_load_round_trip(tmp_path):
    g = build_graph(_items({1: ["a", "b"], 2: ["a", "b"], 3: ["b"]}, {3: ["Comedy", "Drama"]}), 1)
    g.dump(tmp_path / "g.tsv")
    h = HeteroGraph.load(tmp_path / "g.tsv")
    assert h.stats() == g.stats()
    assert h.edges_item_item == g.edges_item_item and h.edges_item_category == g.edges_item_category


def _hand_tfidf(docs):
    n = len(docs)
    vocab = sorted({t for d in docs for t in d.split()})
    df = {t: sum(t in d.split() for d in docs) for t in vocab}
    vecs = []
    for d in docs:
        v = np.array([d.split().count(t) * (math.log((1 + n) / (1 + df[t])) + 1) for t in vocab])
        vecs.append(v / np.linalg.norm(v))
    return vocab, vecs


def test_text_index_matches_hand_tfidf():
    docs = {1: "aa bb", 2: "aa cc", 3: "cc cc"}
    idx = build_text_index(docs)
    vocab, vecs = _hand_tfidf(list(docs.values()))
    assert list(idx.vocabulary) == vocab
    for k, item in enumerate(docs):
        assert np.allclose(idx.vector(item).toarray().ravel(), vecs[k])
    # idf("aa") = ln(4/3)+1, idf("bb") = ln 2 + 1; doc1.doc2 = idf_a^2 / (|d1||d2|)
    ia, ib, ic = math.log(4 / 3) + 1, math.log(2) + 1, math.log(4 / 3) + 1
    hand = ia * ia / (math.hypot(ia, ib) * math.hypot(ia, ic))
    assert float(idx.vector(1).multiply(idx.vector(2)).sum()) == pytest.approx(hand, rel=1e-12)
    assert text_similarity(idx, "aa", 1) == pytest.approx(ia / math.hypot(ia, ib), rel=1e-12)
    norms = [np.linalg.norm(idx.vector(i).toarray()) for i in docs]
    assert np.allclose(norms, 1.0) and np.all(idx.idf > 0)


def test_text_similarity_edge_cases():
    idx = build_text_index({1: "red apple", 2: "red apple", 3: "blue sky", 4: ""})
    assert text_similarity(idx, "red apple", 1) == pytest.approx(1.0)
    assert float(idx.vector(1).multiply(idx.vector(2)).sum()) == pytest.approx(1.0)
    assert text_similarity(idx, "blue sky", 1) == 0.0
    assert text_similarity(idx, "", 1) == 0.0
    assert text_similarity(idx, "red", 4) == 0.0
    with pytest.raises(KeyError):
        text_similarity(idx, "red", 99)


def test_shared_concepts_examples():
    tags = {1: ["a", "b"], 2: ["b", "c", "d"], 3: ["a", "c"], 4: ["a", "b", "c"], 5: []}
    g = build_graph(_items(tags), 1)
    assert shared_concepts(g, [5], 4) == 0
    assert shared_concepts(g, [1, 2], 4) == 3
    for hist in ([1], [2, 3], [1, 3, 5], []):
        for cand in range(1, 6):
            union = set().union(*[set(tags[h]) for h in hist]) if hist else set()
            assert shared_concepts(g, hist, cand) == len(union & set(tags[cand]))
