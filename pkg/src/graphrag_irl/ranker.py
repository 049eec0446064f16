"""Reward models trained with the listwise (single-step MaxEnt IRL) objective.

A transition is a candidate set with one expert choice. The policy over a
set is softmax(R), the loss is the mean of -log pi(expert), and the
gradient with respect to each candidate reward is pi - onehot(expert),
backpropagated by hand through the linear or two-layer ReLU network.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import ItemId
from .errors import NumericalError
from .features import Standardizer

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class RewardModel:
    variant: str  # "linear" | "mlp"
    params: dict[str, np.ndarray]
    standardizer: Standardizer | None = None

    @property
    def d(self) -> int:
        return self.params["w"].shape[0] if self.variant == "linear" else self.params["W1"].shape[1]

    @property
    def h(self) -> int:
        return 0 if self.variant == "linear" else self.params["W1"].shape[0]

    def copy(self) -> "RewardModel":
        return RewardModel(self.variant, {k: v.copy() for k, v in self.params.items()}, self.standardizer)

    def score(self, raw_features: np.ndarray) -> np.ndarray:
        """Standardize raw features with the attached standardizer, then reward."""
        x = raw_features if self.standardizer is None else self.standardizer.apply(raw_features)
        return reward(self, x)


def init_model(variant: str, d: int, h: int = 64, seed: int = 0, zero: bool = False) -> RewardModel:
    """Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases."""
    rng = np.random.default_rng(seed)

    def glorot(shape, fan_in, fan_out):
        if zero:
            return np.zeros(shape)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    if variant == "linear":
        params = {"w": glorot((d,), d, 1), "b": np.zeros(())}
    elif variant == "mlp":
        params = {"W1": glorot((h, d), d, h), "b1": np.zeros(h),
                  "w2": glorot((h,), h, 1), "b2": np.zeros(())}
    else:
        raise ValueError(f"unknown reward variant {variant!r}")
    return RewardModel(variant, params)


def _check_shape(model: RewardModel, phi: np.ndarray) -> None:
    if phi.shape[-1] != model.d:
        raise ValueError(f"feature dimension {phi.shape[-1]} does not match model d={model.d}")


def _forward(model: RewardModel, phi: np.ndarray):
    # computed in the feature dtype; float32 batches roughly quarter the step time
    p = {k: v.astype(phi.dtype, copy=False) for k, v in model.params.items()}
    if model.variant == "linear":
        return phi @ p["w"] + p["b"], None
    z = phi @ p["W1"].T + p["b1"]
    a = np.maximum(z, 0.0)
    return a @ p["w2"] + p["b2"], (z, a)


def reward(model: RewardModel, phi: np.ndarray) -> np.ndarray:
    """R(s, a) for standardized features ``phi`` of shape (..., d)."""
    phi = np.asarray(phi, dtype=np.float64)
    _check_shape(model, phi)
    r, _ = _forward(model, phi)
    return r


def log_softmax(r: np.ndarray) -> np.ndarray:
    m = np.max(r, axis=-1, keepdims=True)
    shifted = r - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def policy(rewards: np.ndarray) -> np.ndarray:
    """Boltzmann distribution over a candidate set (max-subtracted softmax)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[-1] < 1:
        raise ValueError("empty candidate set")
    e = np.exp(r - np.max(r, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class TransitionBatch:
    """``features`` (T, C, d) and the index of the expert item in each set."""

    features: np.ndarray
    expert: np.ndarray

    def __post_init__(self):
        self.expert = np.asarray(self.expert, dtype=np.int64)
        if not np.issubdtype(self.features.dtype, np.floating):
            self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3 or self.expert.shape != (self.features.shape[0],):
            raise ValueError("features must be (T, C, d) with one expert index per transition")
        if np.any(self.expert < 0) or np.any(self.expert >= self.features.shape[1]):
            raise ValueError("expert index outside its candidate set")

    @classmethod
    def from_transitions(cls, transitions: Sequence[tuple[np.ndarray, Sequence[ItemId], ItemId]]) -> "TransitionBatch":
        """Build from (features (C, d), candidate ids, expert id) triples."""
        feats, experts = [], []
        for phi, candidates, expert in transitions:
            candidates = list(candidates)
            if expert not in candidates:
                raise ValueError(f"expert item {expert!r} missing from its candidate set")
            feats.append(np.asarray(phi, dtype=np.float64))
            experts.append(candidates.index(expert))
        return cls(np.stack(feats), np.array(experts))


def listwise_loss(model: RewardModel, batch: TransitionBatch) -> float:
    """Mean over transitions of -log pi(expert | s)."""
    _check_shape(model, batch.features)
    r, _ = _forward(model, batch.features)
    lp = log_softmax(r)
    return float(-lp[np.arange(len(batch.expert)), batch.expert].mean())


def loss_gradient(model: RewardModel, batch: TransitionBatch, l2: float = 0.0):
    """Loss, parameter gradients and per-candidate reward gradients.

    ``l2`` adds 0.5 * l2 * ||weights||^2 (biases excluded).
    """
    phi = batch.features
    _check_shape(model, phi)
    t = phi.shape[0]
    r, cache = _forward(model, phi)
    lp = log_softmax(r)
    rows = np.arange(t)
    loss = float(-lp[rows, batch.expert].mean())
    d_r = np.exp(lp)
    d_r[rows, batch.expert] -= 1.0
    d_r /= t
    p = {k: v.astype(phi.dtype, copy=False) for k, v in model.params.items()}
    flat_phi = phi.reshape(-1, phi.shape[-1])
    flat_dr = d_r.reshape(-1)
    if model.variant == "linear":
        grads = {"w": flat_phi.T @ flat_dr, "b": np.asarray(flat_dr.sum())}
        weights = ("w",)
    else:
        z, a = cache
        h = z.shape[-1]
        d_z = (flat_dr[:, None] * p["w2"]) * (z.reshape(-1, h) > 0)
        grads = {
            "W1": d_z.T @ flat_phi,
            "b1": d_z.sum(axis=0),
            "w2": a.reshape(-1, h).T @ flat_dr,
            "b2": np.asarray(flat_dr.sum()),
        }
        weights = ("W1", "w2")
    grads = {k: np.asarray(g, dtype=np.float64) for k, g in grads.items()}
    p = model.params
    if l2 > 0:
        for k in weights:
            loss += 0.5 * l2 * float(np.sum(p[k] ** 2))
            grads[k] = grads[k] + l2 * p[k]
    return loss, grads, d_r * t


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, lr: float = 1e-2):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g


@dataclass
class TrainConfig:
    variant: str = "mlp"
    lr: float = 1e-3
    max_epochs: int = 50
    patience: int = 5
    hidden: int = 64
    seed: int = 0
    n_neg: int = 99
    optimizer: str = "adam"
    l2: float = 0.0
    batch_size: int = 1
    zero_init: bool = False
    dtype: str = "float64"  # feature dtype for the forward/backward pass

    def __post_init__(self):
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if self.lr <= 0 or self.max_epochs < 1 or self.patience < 0 or self.batch_size < 1:
            raise ValueError("invalid training configuration")

    def make_optimizer(self):
        if self.optimizer == "adam":
            return Adam(self.lr)
        if self.optimizer == "sgd":
            return SGD(self.lr)
        raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    steps: int
    val: dict[str, float] = field(default_factory=dict)
    improved: bool = False


class TrainingRun:
    """Epoch-by-epoch optimization with best-validation tracking.

    Lets several models consume one shared stream of batches (each through
    its own column ``view``) while keeping separate optimizers and stopping
    rules.
    """

    def __init__(self, model: RewardModel, cfg: TrainConfig, metric: str = "ndcg@10", name: str = ""):
        self.model, self.cfg, self.metric, self.name = model, cfg, metric, name
        self.opt = cfg.make_optimizer()
        self.best = model.copy()
        self.best_score = -math.inf
        self.bad = 0
        self.history: list[EpochRecord] = []
        self.done = False
        self._total, self._n, self._steps = 0.0, 0, 0

    @property
    def epoch(self) -> int:
        return len(self.history)

    def step(self, batch: TransitionBatch) -> float:
        loss, grads, _ = loss_gradient(self.model, batch, self.cfg.l2)
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericalError(f"{self.name or 'model'}: non-finite loss/gradient at epoch {self.epoch}, "
                                 f"step {self._steps}: loss={loss}")
        self.opt.step(self.model.params, grads)
        self._total += loss * len(batch.expert)
        self._n += len(batch.expert)
        self._steps += 1
        return loss

    def end_epoch(self, scores: dict[str, float]) -> EpochRecord:
        rec = EpochRecord(self.epoch, self._total / max(self._n, 1), self._steps, dict(scores))
        self._total, self._n, self._steps = 0.0, 0, 0
        if scores[self.metric] > self.best_score:
            self.best, self.best_score, self.bad = self.model.copy(), scores[self.metric], 0
            rec.improved = True
        else:
            self.bad += 1
        self.history.append(rec)
        log.info("%sepoch %d loss %.5f val %s=%.5f%s", f"[{self.name}] " if self.name else "", rec.epoch,
                 rec.loss, self.metric, scores[self.metric], " *" if rec.improved else "")
        if (self.bad > 0 and self.bad >= self.cfg.patience) or self.epoch >= self.cfg.max_epochs:
            self.done = True
        return rec


def train(
    model: RewardModel,
    cfg: TrainConfig,
    epoch_batches: Callable[[int], Iterable[TransitionBatch]],
    validate: Callable[[RewardModel], dict[str, float]],
    metric: str = "ndcg@10",
) -> tuple[RewardModel, list[EpochRecord]]:
    """Optimize ``model`` in place; return the best-validation copy and the log.

    Training stops once ``patience`` consecutive epochs fail to improve the
    validation ``metric`` (with patience 0, at the first such epoch).
    """
    run = TrainingRun(model, cfg, metric)
    while not run.done:
        for batch in epoch_batches(run.epoch):
            run.step(batch)
        run.end_epoch(validate(model))
    return run.best, run.history


def write_training_log(path: str | Path, history: Sequence[EpochRecord]) -> None:
    keys = sorted({k for r in history for k in r.val})
    lines = ["epoch,loss,steps," + ",".join(f"val_{k}" for k in keys) + ",improved"]
    for r in history:
        vals = ",".join(f"{r.val.get(k, float('nan')):.10f}" for k in keys)
        lines.append(f"{r.epoch},{r.loss:.10f},{r.steps},{vals},{int(r.improved)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# shortlist

@dataclass
class ShortlistEntry:
    item_id: ItemId
    reward: float
    irl_rank: int
    confidence: str


@dataclass
class ScoredShortlist:
    entries: list[ShortlistEntry]

    @property
    def item_ids(self) -> list[ItemId]:
        return [e.item_id for e in self.entries]

    def ranks(self) -> dict[ItemId, int]:
        return {e.item_id: e.irl_rank for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


def rank_order(scores: Sequence[float], item_ids: Sequence[ItemId]) -> list[int]:
    """Positions sorted by score descending, ties by ascending item id."""
    return sorted(range(len(item_ids)), key=lambda j: (-float(scores[j]), item_ids[j]))


def confidence_labels(n: int) -> list[str]:
    third = math.ceil(n / 3)
    return ["high" if r < third else "medium" if r < 2 * third else "low" for r in range(n)]


def shortlist(rewards: Sequence[float], item_ids: Sequence[ItemId], n: int) -> ScoredShortlist:
    if n < 1:
        raise ValueError("N must be >= 1")
    order = rank_order(rewards, item_ids)[:n]
    labels = confidence_labels(len(order))
    return ScoredShortlist([ShortlistEntry(item_ids[j], float(rewards[j]), r + 1, labels[r])
                            for r, j in enumerate(order)])


# ---------------------------------------------------------------------------
# checkpoints

def save_model(path: str | Path, model: RewardModel, config_hash: str = "", extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "variant": model.variant, "d": model.d, "h": model.h,
            "config_hash": config_hash, **(extra or {})}
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    if model.standardizer is not None:
        arrays["std_mean"] = model.standardizer.mean
        arrays["std_std"] = model.standardizer.std
        meta["std_eps"] = model.standardizer.eps
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_model(path: str | Path) -> tuple[RewardModel, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k[len("param_"):]: z[k].copy() for k in z.files if k.startswith("param_")}
        std = None
        if "std_mean" in z.files:
            std = Standardizer(z["std_mean"].copy(), z["std_std"].copy(), meta["std_eps"])
    return RewardModel(meta["variant"], params, std), meta


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
