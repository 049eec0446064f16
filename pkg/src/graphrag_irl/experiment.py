"""End-to-end stages: prepare, build graph, train, evaluate, rerank.

Each stage writes into a content-addressed folder under the output
directory. All stage outputs are deterministic functions of the config;
wall-clock timings go to the log only, never into reports.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .config import ExperimentConfig, ProviderConfig
from .context import ExperimentContext
from .data import (CandidateSet, FilteredDataset, NegativeSampler, Split, UserId, evaluation_candidates,
                   filter_dataset, load_interactions, split_leave_last_two)
from .errors import DataError
from .evaluation import (METRIC_NAMES, LogisticBaseline, MetricsReport, ablation_table, format_csv,
                         format_table, mean_metrics, ranks_from_scores, superadditivity)
from .features import Standardizer
from .graph import (HeteroGraph, TextIndex, build_graph, build_text_index, calibrate_threshold, item_document,
                    threshold_sweep)
from .ranker import (EpochRecord, RewardModel, TrainingRun, TransitionBatch, init_model, load_model,
                     rank_order, reward, save_model, shortlist, write_training_log)
from .rerank.fusion import FusionCase, boost_only_gate, mean_ndcg, tune_alpha
from .rerank.parsing import PROVIDER_ERROR, RankedResponse, parse_ranking
from .rerank.prompt import build_prompt
from .rerank.providers import ResponseCache, make_provider, query_many
from .retrieval import build_profile
from .seeding import canonical_json, content_hash, derive_seed

log = logging.getLogger(__name__)

FEATURE_CHUNK = 512


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    _write(path, json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------------------
# prepare

@dataclass
class Prepared:
    raw_stats: dict
    dataset: FilteredDataset
    split: Split
    val_sets: dict[UserId, CandidateSet]
    test_sets: dict[UserId, CandidateSet]
    key: str

    def stats(self) -> dict:
        f = self.dataset.stats()
        return {"raw": self.raw_stats, "filtered": f,
                "positive_share": f["positives"] / max(self.raw_stats["interactions"], 1),
                "split_users": len(self.split.users), "excluded_users": len(self.split.excluded)}


def prepare(cfg: ExperimentConfig) -> Prepared:
    dc = cfg.dataset
    raw = load_interactions(dc)
    ds = filter_dataset(raw, dc.min_user_interactions, dc.min_item_interactions, dc.min_user_positives,
                        dc.positive, dc.filter_mode)
    split = split_leave_last_two(ds)
    if not split.users:
        raise DataError("no user has the 3 positives a split needs")
    sampler = NegativeSampler(ds)
    val_sets = evaluation_candidates(ds, split, dc.n_neg, dc.seed, "val", sampler)
    test_sets = evaluation_candidates(ds, split, dc.n_neg, dc.seed, "test", sampler)
    return Prepared(raw.stats(), ds, split, val_sets, test_sets, content_hash(dataclasses.asdict(dc)))


def format_stats(stats: dict) -> str:
    r, f = stats["raw"], stats["filtered"]
    return (f"raw: {r['interactions']} interactions, {r['users']} users, {r['items']} items\n"
            f"filtered: {f['users']} users, {f['items']} items, {f['interactions']} interactions, "
            f"{f['positives']} positives ({100 * stats['positive_share']:.1f}% of raw)\n"
            f"split: {stats['split_users']} users ({stats['excluded_users']} excluded)\n")


def write_prepare(prep: Prepared, out: Path) -> Path:
    d = out / f"prepare-{prep.key}"
    _write_json(d / "stats.json", prep.stats())
    _write(d / "stats.txt", format_stats(prep.stats()))
    rows = [f"{u}\t{','.join(str(x.item_id) for x in s.train)}\t{s.val.item_id}\t{s.test.item_id}"
            for u, s in sorted(prep.split.users.items())]
    _write(d / "split.tsv", "user\ttrain\tval\ttest\n" + "\n".join(rows) + "\n")
    for stage, sets in (("val", prep.val_sets), ("test", prep.test_sets)):
        rows = [f"{u}\t{c.seed}\t{c.positive}\t{','.join(map(str, c.negatives))}" for u, c in sorted(sets.items())]
        _write(d / f"candidates_{stage}.tsv", "user\tseed\tpositive\tnegatives\n" + "\n".join(rows) + "\n")
    return d


# ---------------------------------------------------------------------------
# graph

@dataclass
class GraphBundle:
    graph: HeteroGraph
    text_index: TextIndex
    documents: dict
    threshold: int
    sweep: dict[int, int]
    key: str


def build_graph_stage(cfg: ExperimentConfig, prep: Prepared) -> GraphBundle:
    items = prep.dataset.items
    sweep = threshold_sweep(items)
    threshold = cfg.graph.min_concept_freq
    if cfg.graph.calibrate_to is not None:
        threshold = calibrate_threshold(sweep, cfg.graph.calibrate_to)
        log.info("calibrated concept threshold %d (target %d concepts)", threshold, cfg.graph.calibrate_to)
    graph = build_graph(items, threshold)
    docs = {i: item_document(m, cfg.graph.top_tags) for i, m in items.items()}
    index = build_text_index(docs)
    key = content_hash([prep.key, dataclasses.asdict(cfg.graph)])
    return GraphBundle(graph, index, docs, threshold, sweep, key)


def format_sweep(sweep: dict[int, int]) -> str:
    return "threshold\tconcepts\n" + "".join(f"{t}\t{n}\n" for t, n in sorted(sweep.items()))


def write_graph(bundle: GraphBundle, out: Path) -> Path:
    d = out / f"graph-{bundle.key}"
    d.mkdir(parents=True, exist_ok=True)
    bundle.graph.dump(d / "graph.tsv")
    stats = bundle.graph.stats()
    stats.update(threshold=bundle.threshold, vocabulary=len(bundle.text_index.vocabulary))
    _write_json(d / "graph_stats.json", stats)
    _write(d / "threshold_sweep.tsv", format_sweep(bundle.sweep))
    return d


# ---------------------------------------------------------------------------
# models

@dataclass(frozen=True)
class ModelSpec:
    name: str
    objective: str  # "irl" | "supervised"
    variant: str  # "mlp" | "linear"
    graph: bool


def model_name(objective: str, variant: str, graph: bool) -> str:
    base = "supervised" if objective == "supervised" else f"irl_{variant}"
    return base + ("+graph" if graph else "")


ALL_SPECS = tuple(
    ModelSpec(model_name(o, v, g), o, v, g)
    for o, v in (("supervised", "linear"), ("irl", "linear"), ("irl", "mlp"))
    for g in (False, True)
)
SPECS = {s.name: s for s in ALL_SPECS}


@dataclass
class Trained:
    model: RewardModel
    history: list[EpochRecord] = field(default_factory=list)
    info: dict = field(default_factory=dict)


class Experiment:
    def __init__(self, cfg: ExperimentConfig, prep: Prepared | None = None, bundle: GraphBundle | None = None):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        t0 = time.perf_counter()
        self.prep = prep or prepare(cfg)
        self.bundle = bundle or build_graph_stage(cfg, self.prep)
        self.ctx = ExperimentContext(self.prep.dataset, self.prep.split, self.bundle.graph,
                                     self.bundle.text_index, cfg.retrieval)
        log.info("experiment context ready in %.1fs", time.perf_counter() - t0)
        ctx = self.ctx
        self.layout = ctx.layout(True)
        self.d_base = self.layout.d_base
        self.val_cands = ctx.eval_candidates(self.prep.val_sets)
        self.test_cands = ctx.eval_candidates(self.prep.test_sets)
        self._val_raw = ctx.features(ctx.val_states, self.val_cands, True)
        self._test_raw = ctx.features(ctx.test_states, self.test_cands, True)
        first = np.r_[0, np.flatnonzero(np.diff(ctx.state_user)) + 1]
        self._train_pos = ctx.train_states - first[ctx.state_user[ctx.train_states]]
        # checkpoints and reports are shared by configs that train identical models
        self.run_dir = self.out / f"run-{cfg.train_hash()}"

    # -- training data -----------------------------------------------------
    def epoch_order(self, seed: int, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(seed, "order", epoch))
        return rng.permutation(len(self.ctx.train_states))

    def draw(self, seed: int, epoch: int, transitions: np.ndarray) -> np.ndarray:
        """(B, 1 + n_neg) item indices, expert in column 0."""
        ctx = self.ctx
        n_neg = self.cfg.train.n_neg
        out = np.empty((len(transitions), 1 + n_neg), dtype=np.int64)
        for r, t in enumerate(transitions):
            st = ctx.train_states[t]
            user = ctx.user_ids[ctx.state_user[st]]
            out[r, 0] = ctx.state_item[st]
            out[r, 1:] = ctx.sampler.draw(user, n_neg, derive_seed(seed, "train", user, epoch, int(self._train_pos[t])))
        return out

    def raw_batches(self, seed: int, epoch: int, size: int) -> Iterator[np.ndarray]:
        order = self.epoch_order(seed, epoch)
        for lo in range(0, len(order), size):
            idx = order[lo:lo + size]
            yield self.ctx.features(self.ctx.train_states[idx], self.draw(seed, epoch, idx), True)

    def fit_standardizer(self, seed: int, dtype) -> tuple[Standardizer, np.ndarray]:
        """Standardizer over epoch-0 training features, plus those features standardized."""
        n, c, d = len(self.ctx.train_states), 1 + self.cfg.train.n_neg, self.layout.d
        store = np.empty((n, c, d), dtype=dtype)
        pos = [0]

        def stream():
            for raw in self.raw_batches(seed, 0, FEATURE_CHUNK):
                store[pos[0]:pos[0] + len(raw)] = raw
                pos[0] += len(raw)
                yield raw

        std = Standardizer.fit_batches(stream())
        for lo in range(0, n, FEATURE_CHUNK):
            store[lo:lo + FEATURE_CHUNK] = std.apply(store[lo:lo + FEATURE_CHUNK].astype(np.float64))
        return std, store

    # -- validation --------------------------------------------------------
    def _cols(self, graph: bool) -> slice:
        return slice(None) if graph else slice(0, self.d_base)

    def stage_scores(self, model: RewardModel, stage: str, graph: bool) -> np.ndarray:
        raw = self._val_raw if stage == "val" else self._test_raw
        return model.score(raw[..., self._cols(graph)])

    def stage_ranks(self, scores: np.ndarray, stage: str) -> np.ndarray:
        return ranks_from_scores(scores, self.val_cands if stage == "val" else self.test_cands)

    def _validate(self, model: RewardModel, std: Standardizer, graph: bool) -> dict[str, float]:
        x = std.apply(self._val_raw[..., self._cols(graph)])
        return mean_metrics(self.stage_ranks(reward(model, x), "val"))

    # -- training ----------------------------------------------------------
    def seed_dir(self, seed: int) -> Path:
        return self.run_dir / f"seed-{seed}"

    def train_models(self, seed: int, names: Sequence[str]) -> dict[str, Trained]:
        """Train ``names`` for one seed on shared batches (IRL models in lockstep)."""
        specs = [SPECS[n] for n in names]
        tcfg = self.cfg.train
        dtype = np.dtype(tcfg.dtype)
        t0 = time.perf_counter()
        std, x0 = self.fit_standardizer(seed, dtype)
        log.info("seed %d: epoch-0 features %s fitted in %.1fs", seed, x0.shape, time.perf_counter() - t0)
        stds = {g: Standardizer(std.mean[self._cols(g)], std.std[self._cols(g)], std.eps) for g in (False, True)}
        out: dict[str, Trained] = {}
        for spec in specs:
            if spec.objective != "supervised":
                continue
            t0 = time.perf_counter()
            sc = self.cfg.supervised
            lr = LogisticBaseline(sc.l2, sc.gtol, sc.max_iter)
            x = x0.reshape(-1, x0.shape[-1])[:, self._cols(spec.graph)]
            y = np.zeros((x0.shape[0], x0.shape[1]))
            y[:, 0] = 1.0
            lr.fit(x, y.ravel())
            model = RewardModel("linear", {"w": lr.w, "b": np.asarray(lr.b)}, stds[spec.graph])
            res = lr.result
            info = {"iterations": int(res.nit), "converged": bool(res.success), "loss": float(res.fun),
                    "grad_norm": float(np.linalg.norm(res.jac))}
            val = self._validate(model, stds[spec.graph], spec.graph)
            out[spec.name] = Trained(model, [EpochRecord(0, float(res.fun), int(res.nit), val, True)], info)
            log.info("seed %d: %s fitted in %.1fs (%d iterations, val ndcg@10 %.4f)", seed, spec.name,
                     time.perf_counter() - t0, res.nit, val["ndcg@10"])
        runs: dict[str, TrainingRun] = {}
        for spec in specs:
            if spec.objective != "irl":
                continue
            d = self.layout.d if spec.graph else self.d_base
            cfg = dataclasses.replace(tcfg, variant=spec.variant)
            model = init_model(spec.variant, d, tcfg.hidden, derive_seed(seed, "init", spec.name), tcfg.zero_init)
            runs[spec.name] = TrainingRun(model, cfg, name=f"seed {seed} {spec.name}")
        epoch = 0
        while any(not r.done for r in runs.values()):
            t0 = time.perf_counter()
            active = {n: r for n, r in runs.items() if not r.done}
            graphs = {SPECS[n].graph for n in active}
            if epoch == 0:
                batches = (x0[lo:lo + tcfg.batch_size] for lo in range(0, len(x0), tcfg.batch_size))
            else:
                batches = self._standardized_batches(seed, epoch, std, dtype)
            for xb in batches:
                views = {g: (xb if g else np.ascontiguousarray(xb[..., :self.d_base])) for g in graphs}
                expert = np.zeros(len(xb), dtype=np.int64)
                for n, r in active.items():
                    r.step(TransitionBatch(views[SPECS[n].graph], expert))
            if epoch == 0:
                x0 = None  # release the stored epoch-0 features
            for n, r in active.items():
                r.end_epoch(self._validate(r.model, stds[SPECS[n].graph], SPECS[n].graph))
            log.info("seed %d epoch %d (%d models) took %.1fs", seed, epoch, len(active), time.perf_counter() - t0)
            epoch += 1
        for n, r in runs.items():
            best = r.best
            best.standardizer = stds[SPECS[n].graph]
            best_epoch = max((h.epoch for h in r.history if h.improved), default=0)
            out[n] = Trained(best, r.history, {"epochs": len(r.history), "best_epoch": best_epoch,
                                               "best_val_ndcg@10": r.best_score})
        return {n: out[n] for n in names}

    def _standardized_batches(self, seed: int, epoch: int, std: Standardizer, dtype) -> Iterator[np.ndarray]:
        bs = self.cfg.train.batch_size
        chunk = max(FEATURE_CHUNK // bs, 1) * bs
        for raw in self.raw_batches(seed, epoch, chunk):
            z = std.apply(raw).astype(dtype, copy=False)
            for lo in range(0, len(z), bs):
                yield z[lo:lo + bs]

    def models(self, seed: int, names: Sequence[str], retrain: bool = False) -> dict[str, Trained]:
        """Load checkpoints for this config when present, train the rest."""
        d = self.seed_dir(seed)
        h = self.cfg.train_hash()
        have: dict[str, Trained] = {}
        if not retrain:
            for n in names:
                p = d / f"model_{n}.npz"
                if p.exists():
                    model, meta = load_model(p)
                    if meta.get("config_hash") == h:
                        have[n] = Trained(model, [], meta.get("info", {}))
        missing = [n for n in names if n not in have]
        if missing:
            trained = self.train_models(seed, missing)
            d.mkdir(parents=True, exist_ok=True)
            for n, t in trained.items():
                save_model(d / f"model_{n}.npz", t.model, h, {"info": t.info, "name": n, "seed": seed})
                write_training_log(d / f"training_log_{n}.csv", t.history)
            have.update(trained)
        return {n: have[n] for n in names}

    # -- evaluation --------------------------------------------------------
    def baseline_ranks(self, seed: int) -> dict[str, np.ndarray]:
        pop = self.ctx.popularity[self.test_cands]
        rand = np.empty(len(self.ctx.user_ids), dtype=np.int64)
        for u, user in enumerate(self.ctx.user_ids):
            perm = np.random.default_rng(derive_seed(seed, "random", user)).permutation(self.test_cands.shape[1])
            rand[u] = int(np.flatnonzero(perm == 0)[0]) + 1
        return {"random": rand, "popularity": self.stage_ranks(pop, "test")}

    def evaluate_seed(self, seed: int, names: Sequence[str], baselines: bool = True) -> dict[str, MetricsReport]:
        n_short = self.cfg.rerank.shortlist_n
        reports: dict[str, MetricsReport] = {}
        if baselines:
            for n, ranks in self.baseline_ranks(seed).items():
                reports[n] = MetricsReport(n, mean_metrics(ranks), len(ranks))
        for n, t in self.models(seed, names).items():
            ranks = self.stage_ranks(self.stage_scores(t.model, "test", SPECS[n].graph), "test")
            reports[n] = MetricsReport(n, mean_metrics(ranks), len(ranks), float(np.mean(ranks <= n_short)))
        return reports

    def evaluate(self, names: Sequence[str], baselines: bool = True) -> "EvaluationResult":
        per_seed = {s: self.evaluate_seed(s, names, baselines) for s in self.cfg.seeds}
        result = EvaluationResult(self.cfg.hash(), per_seed, self.cfg.rerank.shortlist_n)
        result.write(self.run_dir, self.manifest())
        return result

    def manifest(self) -> dict:
        prep = self.prep
        split_hash = content_hash({str(u): [[x.item_id for x in s.train], s.val.item_id, s.test.item_id]
                                   for u, s in sorted(prep.split.users.items())})
        cand_hash = content_hash({stage: {str(u): c.items for u, c in sorted(sets.items())}
                                  for stage, sets in (("val", prep.val_sets), ("test", prep.test_sets))})
        gstats = self.bundle.graph.stats()
        return {"config": self.cfg.to_dict(), "config_hash": self.cfg.hash(), "seeds": list(self.cfg.seeds),
                "dataset": prep.stats(), "dataset_key": prep.key, "split_hash": split_hash,
                "candidates_hash": cand_hash, "graph": {**gstats, "threshold": self.bundle.threshold},
                "graph_key": self.bundle.key, "feature_names": self.layout.names()}

    # -- rerank ------------------------------------------------------------
    def rerank(self, provider_cfg: ProviderConfig, seed: int | None = None, transport=None) -> "RerankResult":
        cfg = self.cfg
        seed = cfg.seeds[0] if seed is None else seed
        name = model_name("irl", cfg.train.variant, cfg.features.graph)
        model = self.models(seed, [name])[name].model
        n_short = cfg.rerank.shortlist_n
        positives = {}
        for u, s in self.prep.split.users.items():
            positives[("val", u)] = s.val.item_id
            positives[("test", u)] = s.test.item_id
        provider = make_provider(provider_cfg, positives, transport)
        cache_root = Path(provider_cfg.cache_dir) if provider_cfg.cache_dir else self.out / "llm_cache"
        cache = ResponseCache.for_provider(cache_root, provider.name, provider.model)
        cases: dict[str, list[FusionCase]] = {}
        responses: dict[str, list[RankedResponse]] = {}
        workers = min(provider_cfg.concurrency, cfg.jobs) if cfg.jobs > 0 else provider_cfg.concurrency
        for stage in ("val", "test"):
            cases[stage], responses[stage] = self._rerank_stage(stage, model, name, n_short, provider, cache,
                                                                workers)
        alpha, grid = tune_alpha(cases["val"], cfg.rerank.alpha_grid)
        irl_val = mean_ndcg(cases["val"], 0.0)
        apply = boost_only_gate(cfg.rerank.gate, irl_val, grid[alpha])
        test_alpha = alpha if apply else 0.0
        result = RerankResult(provider_cfg.name, cfg.hash(), alpha, grid, irl_val, apply, test_alpha, n_short,
                              cases, responses)
        result.check_ceiling()
        result.write(self.run_dir / f"rerank-{provider_cfg.name}")
        return result

    def _rerank_stage(self, stage, model, name, n_short, provider, cache, concurrency):
        ctx, prep = self.ctx, self.prep
        cands = self.val_cands if stage == "val" else self.test_cands
        states = ctx.val_states if stage == "val" else ctx.test_states
        scores = self.stage_scores(model, stage, SPECS[name].graph)
        prompts, orders, pos = [], [], []
        for u, user in enumerate(ctx.user_ids):
            ids = [ctx.item_ids[j] for j in cands[u]]
            order = [ids[j] for j in rank_order(scores[u], ids)]
            sl = shortlist(scores[u], ids, n_short)
            t = ctx.state_time[states[u]]
            profile = build_profile(prep.dataset.trajectories[user], t, prep.dataset.items, ctx.categories,
                                    self.cfg.retrieval.k_recent, self.bundle.graph)
            support = {i: float(ctx.community.support[u, ctx.iindex[i]]) for i in sl.item_ids}
            prompts.append(build_prompt(profile, support, sl, prep.dataset.items, self.cfg.rerank.plain,
                                        self.cfg.rerank.prompt_tags, user, stage))
            orders.append(order)
            pos.append(ids[0])
        raws = query_many(provider, prompts, cache, concurrency)
        out_cases, out_resp = [], []
        for prompt, raw, order, p in zip(prompts, raws, orders, pos):
            if isinstance(raw, Exception):
                resp = RankedResponse(prompt.irl_order, PROVIDER_ERROR)
            else:
                resp = parse_ranking(raw, prompt.irl_order)
            out_resp.append(resp)
            out_cases.append(FusionCase(prompt.user_id, order, resp.ordering, p))
        return out_cases, out_resp


# ---------------------------------------------------------------------------
# results

def mean_reports(per_seed: dict[int, dict[str, MetricsReport]]) -> dict[str, MetricsReport]:
    seeds = sorted(per_seed)
    out = {}
    for n in per_seed[seeds[0]]:
        reps = [per_seed[s][n] for s in seeds]
        metrics = {m: sum(r.metrics[m] for r in reps) / len(reps) for m in reps[0].metrics}
        rec = None if reps[0].shortlist_recall is None else sum(r.shortlist_recall for r in reps) / len(reps)
        out[n] = MetricsReport(n, metrics, reps[0].n_users, rec)
    return out


@dataclass
class EvaluationResult:
    config_hash: str
    per_seed: dict[int, dict[str, MetricsReport]]
    shortlist_n: int

    @property
    def mean(self) -> dict[str, MetricsReport]:
        return mean_reports(self.per_seed)

    def report_text(self) -> str:
        ref = "supervised" if "supervised" in self.mean else None
        parts = []
        for s in sorted(self.per_seed):
            parts.append(format_table(list(self.per_seed[s].values()), ref, title=f"seed {s}"))
        parts.append(format_table(list(self.mean.values()), ref, self.config_hash,
                                  title=f"mean over {len(self.per_seed)} seed(s); recall@N with N={self.shortlist_n}"))
        metrics = {n: r.metrics for n, r in self.mean.items()}
        if "irl_mlp+graph" in metrics:
            parts.append(ablation_table(metrics))
        return "\n".join(parts)

    def superadditivity(self):
        return superadditivity({n: r.metrics["ndcg@10"] for n, r in self.mean.items()})

    def write(self, d: Path, manifest: dict) -> None:
        d.mkdir(parents=True, exist_ok=True)
        _write(d / "report.txt", self.report_text())
        for n in self.mean:
            rows = [self.per_seed[s][n] for s in sorted(self.per_seed)]
            text = format_csv(rows, self.config_hash).splitlines()
            body = [text[0].replace("method,", "seed,method,", 1)]
            body += [f"{s},{line}" for s, line in zip(sorted(self.per_seed), text[1:])]
            body.append("mean," + format_csv([self.mean[n]], self.config_hash).splitlines()[1])
            _write(d / f"metrics_{n.replace('+', '_')}.csv", "\n".join(body) + "\n")
        man = dict(manifest)
        man["evaluation"] = {n: {m: r.metrics[m] for m in METRIC_NAMES} for n, r in self.mean.items()}
        prev = d / "experiment_manifest.json"
        if prev.exists():
            old = json.loads(prev.read_text(encoding="utf-8"))
            if old.get("config_hash") == manifest["config_hash"] and "rerank" in old:
                man["rerank"] = old["rerank"]
        _write_json(prev, man)


@dataclass
class RerankResult:
    provider: str
    config_hash: str
    alpha: float
    grid: dict[float, float]
    irl_val_ndcg: float
    gate_open: bool
    test_alpha: float
    shortlist_n: int
    cases: dict[str, list[FusionCase]]
    responses: dict[str, list[RankedResponse]]

    def ranks(self, alpha: float, stage: str = "test") -> np.ndarray:
        return np.array([c.rank(alpha) for c in sorted(self.cases[stage], key=lambda c: c.user_id)])

    def recall(self, stage: str = "test") -> float:
        return float(np.mean([c.positive in c.shortlist for c in self.cases[stage]]))

    def reports(self) -> dict[str, MetricsReport]:
        rec = self.recall()
        out = {}
        for label, a in (("irl", 0.0), ("llm", 1.0), ("fused", self.alpha), ("final", self.test_alpha)):
            r = self.ranks(a)
            out[label] = MetricsReport(f"{label}(a={a:.1f})", mean_metrics(r), len(r), rec)
        return out

    def fallback_counts(self) -> dict[str, dict[str, int]]:
        out = {}
        for stage, resps in self.responses.items():
            c: dict[str, int] = {}
            for r in resps:
                key = r.fallback_reason or "clean"
                c[key] = c.get(key, 0) + 1
            out[stage] = dict(sorted(c.items()))
        return out

    def helped_hurt(self) -> tuple[int, int]:
        """Per-user diagnostic on test: users whose rank improved / worsened under alpha*."""
        helped = hurt = 0
        for c in self.cases["test"]:
            a, b = c.rank(self.alpha), c.rank(0.0)
            helped += a < b
            hurt += a > b
        return helped, hurt

    def check_ceiling(self) -> None:
        rec = self.recall()
        for rep in self.reports().values():
            for k in (5, 10):
                if k <= self.shortlist_n and rep.metrics[f"hr@{k}"] > rec + 1e-12:
                    raise AssertionError(f"{rep.method}: hr@{k} {rep.metrics[f'hr@{k}']} exceeds "
                                         f"shortlist recall {rec}")

    def summary(self) -> dict:
        helped, hurt = self.helped_hurt()
        return {"provider": self.provider, "alpha": self.alpha, "gate_open": self.gate_open,
                "test_alpha": self.test_alpha, "irl_val_ndcg@10": self.irl_val_ndcg,
                "alpha_grid": {f"{a:.1f}": v for a, v in sorted(self.grid.items())},
                "shortlist_recall": self.recall(), "fallbacks": self.fallback_counts(),
                "helped": helped, "hurt": hurt,
                "test": {k: r.metrics for k, r in self.reports().items()}}

    def report_text(self) -> str:
        lines = [f"provider {self.provider}  config {self.config_hash}",
                 "alpha grid (validation ndcg@10):"]
        lines += [f"  {a:.1f}  {v:.6f}" for a, v in sorted(self.grid.items())]
        helped, hurt = self.helped_hurt()
        lines += [f"alpha* = {self.alpha:.1f}; gate {'open' if self.gate_open else 'closed'}; "
                  f"test alpha = {self.test_alpha:.1f}",
                  f"fallbacks: {self.fallback_counts()}",
                  f"test users helped/hurt at alpha*: {helped}/{hurt}", ""]
        return "\n".join(lines) + format_table(list(self.reports().values()), reference="irl(a=0.0)")

    def write(self, d: Path) -> None:
        d.mkdir(parents=True, exist_ok=True)
        _write(d / "report.txt", self.report_text())
        _write(d / "alpha_grid.csv", "alpha,val_ndcg@10\n" +
               "".join(f"{a:.1f},{v:.10f}\n" for a, v in sorted(self.grid.items())))
        for stage in ("val", "test"):
            alpha = self.test_alpha if stage == "test" else self.alpha
            lines = []
            for c, r in zip(self.cases[stage], self.responses[stage]):
                lines.append(canonical_json({"user": c.user_id, "shortlist": c.shortlist,
                                             "llm_permutation": r.ordering, "fallback_reason": r.fallback_reason,
                                             "fused_order": c.ordering(alpha)[: self.shortlist_n],
                                             "positive": c.positive, "alpha": alpha}))
            _write(d / f"rerank_{stage}.jsonl", "\n".join(lines) + "\n")
        man_path = d.parent / "experiment_manifest.json"
        man = json.loads(man_path.read_text(encoding="utf-8")) if man_path.exists() else {"config_hash": self.config_hash}
        man.setdefault("rerank", {})[self.provider] = self.summary()
        _write_json(man_path, man)
