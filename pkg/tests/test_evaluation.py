from __future__ import annotations

import math

import numpy as np
import pytest

from graphrag_irl.evaluation import (LogisticBaseline, MetricsReport, ablation_table, baseline_popularity,
                                     baseline_random, evaluate, format_csv, format_table, mean_metrics,
                                     metrics_for_rank, random_orderings, rank_of, ranks_from_scores,
                                     superadditivity)


def test_metric_examples():
    m = metrics_for_rank(1)
    assert m["hr@5"] == 1 and m["ndcg@10"] == 1.0 and m["mrr"] == 1.0
    m = metrics_for_rank(3)
    assert m["ndcg@10"] == 0.5 and m["mrr"] == pytest.approx(1 / 3)
    m = metrics_for_rank(11)
    assert m["hr@10"] == 0 and m["ndcg@10"] == 0 and m["mrr"] == pytest.approx(1 / 11)
    with pytest.raises(ValueError):
        metrics_for_rank(0)


def test_metric_properties():
    prev = metrics_for_rank(1)
    for r in range(2, 101):
        m = metrics_for_rank(r)
        assert m["ndcg@10"] <= prev["ndcg@10"] and m["ndcg@5"] <= m["ndcg@10"] and m["hr@5"] <= m["hr@10"]
        assert 0 < m["mrr"] <= 1
        prev = m


def _brute(ordering, positive):
    # independent restatement: scan for the positive, accumulate by definition
    for pos, item in enumerate(ordering, start=1):
        if item == positive:
            dcg = {k: (1 / math.log(pos + 1, 2) if pos <= k else 0.0) for k in (5, 10)}
            return {"hr@5": float(pos <= 5), "hr@10": float(pos <= 10), "ndcg@5": dcg[5], "ndcg@10": dcg[10],
                    "mrr": 1 / pos}
    raise AssertionError


def test_evaluate_matches_bruteforce():
    rng = np.random.default_rng(0)
    orderings, positives = {}, {}
    for u in range(20):
        items = list(rng.permutation(100) + 1000)
        orderings[u] = items
        positives[u] = items[int(rng.integers(0, 100))]
    rep = evaluate("m", orderings, positives)
    per_user = [_brute(orderings[u], positives[u]) for u in range(20)]
    for k in rep.metrics:
        assert rep.metrics[k] == pytest.approx(sum(p[k] for p in per_user) / 20, abs=1e-12)
    assert evaluate("m", orderings, positives).metrics == rep.metrics


def test_perfect_ranker_and_missing_users():
    orderings = {u: [u, 99] for u in range(5)}
    rep = evaluate("p", orderings, {u: u for u in range(5)}, shortlist_n=1)
    assert all(v == 1.0 for v in rep.metrics.values()) and rep.shortlist_recall == 1.0
    with pytest.raises(ValueError, match=r"\[7, 8\]"):
        evaluate("p", orderings, {u: u for u in [0, 7, 8]})


def test_ranks_from_scores_ties_by_item_id():
    scores = np.array([[1.0, 1.0, 2.0, 0.0], [0.5, 0.5, 0.5, 0.5]])
    ids = np.array([[5, 3, 9, 1], [2, 1, 3, 4]])
    assert ranks_from_scores(scores, ids).tolist() == [3, 2]
    assert rank_of([4, 2, 8], 8) == 3


def test_random_baseline_hr10_within_three_sigma():
    sets = {u: list(range(100)) for u in range(2000)}
    orderings = random_orderings(sets, 0)
    hr = np.mean([rank_of(orderings[u], 0) <= 10 for u in sets])
    sigma = math.sqrt(0.1 * 0.9 / 2000)
    assert abs(hr - 0.1) < 3 * sigma
    assert baseline_random(list(range(10)), 3) == baseline_random(list(range(10)), 3)
    assert sorted(baseline_random(list(range(10)), 3)) == list(range(10))


def test_popularity_order_and_ties():
    assert baseline_popularity([7, 8, 9], {7: 1, 8: 5, 9: 3}) == [8, 9, 7]
    assert baseline_popularity([9, 4, 6, 2], {9: 2, 4: 2, 6: 2}) == [4, 6, 9, 2]


def _separable_rows(rng, n=400, d=5):
    x = rng.normal(size=(n, d))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(float)
    x[:, 0] += np.where(y > 0, 0.5, -0.5)  # open a margin
    return x, y


def test_logistic_separable_fixture():
    x, y = _separable_rows(np.random.default_rng(0))
    m = LogisticBaseline(l2=1e-6, max_iter=2000).fit(x, y)
    assert m.accuracy(x, y) == 1.0


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 4))
    y = (rng.random(50) < 0.3).astype(float)
    m = LogisticBaseline(l2=0.3, chunk=17)
    theta = rng.normal(size=5)
    _, g = m.loss_grad(theta, x, y)
    eps = 1e-5
    num = np.array([(m.loss_grad(theta + eps * e, x, y)[0] - m.loss_grad(theta - eps * e, x, y)[0]) / (2 * eps)
                    for e in np.eye(5)])
    assert np.max(np.abs(num - g) / np.maximum(np.abs(g), 1e-8)) < 1e-4


def test_logistic_strong_l2_ties_everything():
    x, y = _separable_rows(np.random.default_rng(2))
    m = LogisticBaseline(l2=1e8).fit(x, y)
    assert np.all(np.abs(m.w) < 1e-6)
    logits = m.logits(x)
    assert np.ptp(logits) < 1e-5


def test_superadditivity_decomposition():
    s = superadditivity({"supervised": 0.20, "irl_mlp": 0.22, "supervised+graph": 0.23, "irl_mlp+graph": 0.27})
    assert s.gain_irl == pytest.approx(0.02) and s.gain_graph == pytest.approx(0.03)
    assert s.synergy == pytest.approx(0.02) and s.superadditive
    s = superadditivity({"supervised": 0.2, "irl_mlp": 0.25, "supervised+graph": 0.25, "irl_mlp+graph": 0.28})
    assert s.synergy == pytest.approx(-0.02) and not s.superadditive


def test_ablation_table_rows():
    metrics = {k: {"hr@10": 0.5, "ndcg@10": v} for k, v in
               {"irl_mlp+graph": 0.25, "irl_mlp": 0.2, "irl_linear+graph": 0.24, "supervised+graph": 0.23,
                "supervised": 0.19}.items()}
    text = ablation_table(metrics)
    assert "- GraphRAG features" in text and "-20.0%" in text and "superadditive" in text


def test_reports_render():
    a = MetricsReport("supervised", mean_metrics([1, 2, 30]), 3)
    b = MetricsReport("irl", mean_metrics([1, 1, 5]), 3, shortlist_recall=1.0)
    table = format_table([a, b], reference="supervised", config_hash="abc")
    assert "config abc" in table and "irl" in table
    assert f"{100 * b.delta(a):+8.1f}%" in table
    csv_text = format_csv([a, b], "abc")
    assert csv_text.splitlines()[0].startswith("method,n_users,hr@5")
    assert csv_text.splitlines()[2].endswith(",1.0000000000,abc")


def test_no_graph_cells_use_base_dimension(toy_experiment):
    trained = toy_experiment.models(0, ["irl_mlp", "irl_mlp+graph", "supervised", "supervised+graph"])
    d_base = toy_experiment.layout.d_base
    assert trained["irl_mlp"].model.d == d_base
    assert trained["irl_mlp+graph"].model.d == d_base + 4
    assert trained["supervised"].model.d == d_base and trained["supervised"].model.variant == "linear"
