"""Experiment configuration: one YAML file with nested sections.

Every section maps onto a dataclass; unknown keys are rejected. The config
hash covers everything that can change results, so ``output_dir`` and
``jobs`` are left out of it.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .context import RetrievalSettings
from .data import DatasetConfig
from .errors import ConfigError
from .ranker import TrainConfig
from .seeding import content_hash

ALPHA_GRID = tuple(round(0.1 * k, 1) for k in range(11))


@dataclass
class GraphSettings:
    min_concept_freq: int = 5
    top_tags: int = 10
    # when set, build-graph picks the threshold whose concept count is closest
    calibrate_to: int | None = None


@dataclass
class FeatureSettings:
    graph: bool = True


@dataclass
class SupervisedSettings:
    l2: float = 1e-4
    gtol: float = 1e-6
    max_iter: int = 1000


@dataclass
class ProviderConfig:
    name: str = "oracle"
    kind: str = "oracle"  # http | oracle | adversary | replay
    endpoint: str = ""
    model: str = "mock"
    auth_env: str = ""
    temperature: float = 0.0
    timeout: float = 60.0
    retries: int = 2
    concurrency: int = 4
    cache_dir: str = ""  # empty: <output_dir>/llm_cache

    def __post_init__(self):
        if self.temperature != 0.0:
            raise ConfigError("provider temperature must be 0")
        if self.kind not in ("http", "oracle", "adversary", "replay"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")
        if self.retries < 0 or self.concurrency < 1 or self.timeout <= 0:
            raise ConfigError(f"provider {self.name!r}: bad retries/concurrency/timeout")


@dataclass
class RerankSettings:
    shortlist_n: int = 20
    prompt_tags: int = 5
    plain: bool = False
    alpha_grid: list[float] = field(default_factory=lambda: list(ALPHA_GRID))
    gate: bool = False
    providers: list[ProviderConfig] = field(default_factory=lambda: [ProviderConfig()])


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    graph: GraphSettings = field(default_factory=GraphSettings)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    features: FeatureSettings = field(default_factory=FeatureSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    supervised: SupervisedSettings = field(default_factory=SupervisedSettings)
    rerank: RerankSettings = field(default_factory=RerankSettings)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    jobs: int = 0  # global bound on worker threads; 0 leaves per-provider limits alone

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("jobs")
        return content_hash(d)

    def train_hash(self) -> str:
        """Hash of the sections that determine trained weights (checkpoint key)."""
        d = self.to_dict()
        # the variant only picks which named cell commands default to; every
        # cell has its own checkpoint, so it stays out of the key
        d["train"].pop("variant")
        return content_hash({k: d[k] for k in ("dataset", "graph", "retrieval", "train", "supervised")})

    def provider(self, name: str) -> ProviderConfig:
        for p in self.rerank.providers:
            if p.name == name:
                return p
        raise ConfigError(f"no provider named {name!r} (have {[p.name for p in self.rerank.providers]})")

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# ---------------------------------------------------------------------------
# loading

def _build(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(hints[key], value, f"{where}.{key}" if where else key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _coerce(tp, value, where: str):
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is list and args and dataclasses.is_dataclass(args[0]):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return [_build(args[0], v, f"{where}[{k}]") for k, v in enumerate(value)]
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if tp is float and isinstance(value, str):
        # YAML 1.1 reads "1e-3" (no dot) as a string
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    return value


def from_dict(data: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read ``path`` (or start from defaults) and apply dotted-key overrides."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        set_dotted(data, key, value)
    return from_dict(data)


def set_dotted(data: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {key}: {part} is not a section")
        node = nxt
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    """``a.b=value`` with the value parsed as YAML (so numbers and lists work)."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    return key.strip(), yaml.safe_load(raw)


def reference() -> str:
    """Every config key with its default, as commented YAML."""
    lines = ["# experiment config reference (all keys optional; values shown are defaults)"]

    def walk(cls, indent: int):
        inst = cls()
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            pad = "  " * indent
            value = getattr(inst, f.name)
            tp = hints[f.name]
            if dataclasses.is_dataclass(tp):
                lines.append(f"{pad}{f.name}:")
                walk(tp, indent + 1)
            elif typing.get_origin(tp) is list and dataclasses.is_dataclass(typing.get_args(tp)[0]):
                lines.append(f"{pad}{f.name}:")
                sub = typing.get_args(tp)[0]
                first = True
                for g in dataclasses.fields(sub):
                    v = yaml.safe_dump(getattr(sub(), g.name), default_flow_style=True).strip()
                    v = v.removesuffix("\n...").removesuffix("...").strip()
                    lines.append(f"{pad}  {'- ' if first else '  '}{g.name}: {v}")
                    first = False
            else:
                v = yaml.safe_dump(value, default_flow_style=True).strip()
                v = v.removesuffix("...").strip()
                lines.append(f"{pad}{f.name}: {v}")

    walk(ExperimentConfig, 0)
    return "\n".join(lines) + "\n"
