"""Top-K metrics, baselines and comparative reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .data import ItemId, UserId
from .errors import NumericalError
from .seeding import derive_seed

K_VALUES = (5, 10)
METRIC_NAMES = ("hr@5", "ndcg@5", "hr@10", "ndcg@10", "mrr")


def metrics_for_rank(rank: int, ks: Sequence[int] = K_VALUES) -> dict[str, float]:
    """Single-relevant-item metrics for a 1-based rank (IDCG = 1)."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    out = {}
    for k in ks:
        hit = rank <= k
        out[f"hr@{k}"] = 1.0 if hit else 0.0
        out[f"ndcg@{k}"] = 1.0 / math.log2(rank + 1) if hit else 0.0
    out["mrr"] = 1.0 / rank
    return out


def rank_of(ordering: Sequence[ItemId], positive: ItemId) -> int:
    return list(ordering).index(positive) + 1


def ranks_from_scores(scores: np.ndarray, item_ids: np.ndarray, positive_col: int = 0) -> np.ndarray:
    """Rank of column ``positive_col`` per row, score descending, ties by item id.

    ``scores`` and ``item_ids`` are (U, C).
    """
    pos_score = scores[:, positive_col][:, None]
    pos_item = item_ids[:, positive_col][:, None]
    ahead = (scores > pos_score) | ((scores == pos_score) & (item_ids < pos_item))
    return 1 + ahead.sum(axis=1)


def mean_metrics(ranks: Sequence[int], ks: Sequence[int] = K_VALUES) -> dict[str, float]:
    """Means over users, summed in the given order."""
    acc: dict[str, float] = {}
    for r in ranks:
        for k, v in metrics_for_rank(int(r), ks).items():
            acc[k] = acc.get(k, 0.0) + v
    n = max(len(ranks), 1)
    return {k: v / n for k, v in acc.items()}


# ---------------------------------------------------------------------------
# baselines

def baseline_random(candidates: Sequence[ItemId], seed: int) -> list[ItemId]:
    rng = np.random.default_rng(seed)
    return [candidates[j] for j in rng.permutation(len(candidates))]


def baseline_popularity(candidates: Sequence[ItemId], counts: Mapping[ItemId, int]) -> list[ItemId]:
    return sorted(candidates, key=lambda i: (-counts.get(i, 0), i))


def random_orderings(candidate_sets: Mapping[UserId, Sequence[ItemId]], master_seed: int) -> dict[UserId, list[ItemId]]:
    return {u: baseline_random(list(c), derive_seed(master_seed, "random", u))
            for u, c in candidate_sets.items()}


class LogisticBaseline:
    """L2-regularized logistic regression on per-candidate features.

    Objective: mean binary cross-entropy over all rows plus
    0.5 * l2 * ||w||^2 (bias unregularized). Fit with L-BFGS until the
    gradient norm drops below ``gtol``.
    """

    def __init__(self, l2: float = 1e-4, gtol: float = 1e-6, max_iter: int = 1000, chunk: int = 200_000):
        self.l2, self.gtol, self.max_iter, self.chunk = l2, gtol, max_iter, chunk
        self.w: np.ndarray | None = None
        self.b = 0.0
        self.result = None

    def loss_grad(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        w, b = theta[:-1], theta[-1]
        n = x.shape[0]
        loss = 0.0
        gw = np.zeros_like(w)
        gb = 0.0
        for lo in range(0, n, self.chunk):
            xc = np.asarray(x[lo:lo + self.chunk], dtype=np.float64)
            yc = y[lo:lo + self.chunk]
            z = xc @ w + b
            # log(1 + e^z) - y z, computed stably
            loss += float(np.sum(np.logaddexp(0.0, z) - yc * z))
            p = 0.5 * (1.0 + np.tanh(0.5 * z))
            resid = p - yc
            gw += xc.T @ resid
            gb += float(resid.sum())
        loss = loss / n + 0.5 * self.l2 * float(w @ w)
        grad = np.concatenate([gw / n + self.l2 * w, [gb / n]])
        return loss, grad

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LogisticBaseline":
        x = np.asarray(x)
        y = np.asarray(y, dtype=np.float64)
        theta0 = np.zeros(x.shape[1] + 1)
        res = minimize(self.loss_grad, theta0, args=(x, y), jac=True, method="L-BFGS-B",
                       options={"gtol": self.gtol, "maxiter": self.max_iter, "maxcor": 20})
        if not np.all(np.isfinite(res.x)) or not np.isfinite(res.fun):
            raise NumericalError(f"logistic baseline diverged: {res.message} (loss={res.fun})")
        self.result = res
        self.w, self.b = res.x[:-1].copy(), float(res.x[-1])
        return self

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.w + self.b

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean((self.logits(x) > 0) == (np.asarray(y) > 0.5)))


# ---------------------------------------------------------------------------
# reports

@dataclass
class RankResult:
    user_id: UserId
    rank_of_positive: int
    method: str
    config_hash: str = ""

    def __post_init__(self):
        if self.rank_of_positive < 1:
            raise ValueError("rank must be >= 1")


@dataclass
class MetricsReport:
    method: str
    metrics: dict[str, float]
    n_users: int
    shortlist_recall: float | None = None
    extra: dict[str, float] = field(default_factory=dict)

    def delta(self, ref: "MetricsReport", key: str = "ndcg@10") -> float:
        base = ref.metrics[key]
        return (self.metrics[key] - base) / base if base else float("nan")


def evaluate(method: str, orderings: Mapping[UserId, Sequence[ItemId]], positives: Mapping[UserId, ItemId],
             shortlist_n: int | None = None, shortlist_hits: Mapping[UserId, bool] | None = None) -> MetricsReport:
    """Average per-user metrics; users are reduced in ascending id order."""
    missing = sorted(set(positives) - set(orderings))
    if missing:
        raise ValueError(f"no ordering for users {missing[:20]}{'...' if len(missing) > 20 else ''}")
    users = sorted(positives)
    ranks = [rank_of(orderings[u], positives[u]) for u in users]
    recall = None
    if shortlist_hits is not None:
        recall = sum(bool(shortlist_hits[u]) for u in users) / len(users)
    elif shortlist_n is not None:
        recall = sum(r <= shortlist_n for r in ranks) / len(users)
    return MetricsReport(method, mean_metrics(ranks), len(users), recall)


def report_from_ranks(method: str, ranks: Mapping[UserId, int]) -> MetricsReport:
    users = sorted(ranks)
    return MetricsReport(method, mean_metrics([ranks[u] for u in users]), len(users))


def format_table(reports: Sequence[MetricsReport], reference: str | None = None,
                 config_hash: str = "", title: str = "") -> str:
    ref = next((r for r in reports if r.method == reference), None)
    width = max([len(r.method) for r in reports] + [6])
    head = f"{'method':<{width}}  " + "  ".join(f"{m:>7}" for m in METRIC_NAMES) + "  d_ndcg@10  recall@N"
    lines = []
    if title:
        lines.append(title)
    if config_hash:
        lines.append(f"config {config_hash}")
    lines += [head, "-" * len(head)]
    for r in reports:
        vals = "  ".join(f"{r.metrics[m]:7.4f}" for m in METRIC_NAMES)
        d = f"{100 * r.delta(ref):+8.1f}%" if ref is not None and r is not ref else f"{'-':>9}"
        rec = f"{r.shortlist_recall:9.4f}" if r.shortlist_recall is not None else f"{'-':>9}"
        lines.append(f"{r.method:<{width}}  {vals}  {d}  {rec}")
    return "\n".join(lines) + "\n"


def format_csv(reports: Sequence[MetricsReport], config_hash: str = "") -> str:
    lines = ["method,n_users," + ",".join(METRIC_NAMES) + ",shortlist_recall,config_hash"]
    for r in reports:
        vals = ",".join(f"{r.metrics[m]:.10f}" for m in METRIC_NAMES)
        rec = "" if r.shortlist_recall is None else f"{r.shortlist_recall:.10f}"
        lines.append(f"{r.method},{r.n_users},{vals},{rec},{config_hash}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ablations

ABLATION_ROWS = (
    ("Full (IRL-MLP + GraphRAG)", "irl_mlp+graph"),
    ("- GraphRAG features", "irl_mlp"),
    ("- Nonlinear reward", "irl_linear+graph"),
    ("- Listwise objective", "supervised+graph"),
    ("- Both (Supervised, flat)", "supervised"),
)


@dataclass
class Superadditivity:
    gain_irl: float
    gain_graph: float
    gain_combined: float

    @property
    def synergy(self) -> float:
        return self.gain_combined - (self.gain_irl + self.gain_graph)

    @property
    def superadditive(self) -> bool:
        return self.synergy > 0


def superadditivity(ndcg: Mapping[str, float]) -> Superadditivity:
    """Gains over ``supervised`` for IRL-MLP, graph features, and both."""
    base = ndcg["supervised"]
    return Superadditivity(ndcg["irl_mlp"] - base, ndcg["supervised+graph"] - base,
                           ndcg["irl_mlp+graph"] - base)


def ablation_table(metrics: Mapping[str, Mapping[str, float]]) -> str:
    full = metrics["irl_mlp+graph"]["ndcg@10"]
    lines = [f"{'configuration':<28}  {'hr@10':>7}  {'ndcg@10':>7}  {'delta':>8}"]
    for label, key in ABLATION_ROWS:
        if key not in metrics:
            continue
        m = metrics[key]
        delta = "-" if key == "irl_mlp+graph" else f"{100 * (m['ndcg@10'] - full) / full:+.1f}%"
        lines.append(f"{label:<28}  {m['hr@10']:7.4f}  {m['ndcg@10']:7.4f}  {delta:>8}")
    if all(k in metrics for k in ("supervised", "irl_mlp", "supervised+graph", "irl_mlp+graph")):
        s = superadditivity({k: metrics[k]["ndcg@10"] for k in metrics})
        lines.append("")
        lines.append(f"gain IRL {s.gain_irl:+.4f}  gain graph {s.gain_graph:+.4f}  "
                     f"sum {s.gain_irl + s.gain_graph:+.4f}  combined {s.gain_combined:+.4f}  "
                     f"synergy {s.synergy:+.4f} ({'superadditive' if s.superadditive else 'not superadditive'})")
    return "\n".join(lines) + "\n"
