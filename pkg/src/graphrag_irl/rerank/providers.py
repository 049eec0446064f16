"""LLM providers, the response cache and bounded-parallel querying.

``http`` speaks the common chat-completions protocol. ``oracle`` and
``adversary`` are offline mocks (positive first / reversed IRL order) and
``replay`` answers from the cache only.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx

from ..config import ProviderConfig
from ..data import ItemId, UserId
from ..errors import ProviderError
from .parsing import format_ranking
from .prompt import PersonaPrompt

log = logging.getLogger(__name__)


class Provider(Protocol):
    name: str
    model: str
    cacheable: bool

    def complete(self, prompt: PersonaPrompt) -> str: ...


class ResponseCache:
    """Append-only JSONL of {prompt_hash, raw_response, timestamp} per (provider, model)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._data: dict[str, str] = {}
        if self.path.exists():
            for n, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    self._data.setdefault(rec["prompt_hash"], rec["raw_response"])
                except (json.JSONDecodeError, KeyError, TypeError):
                    log.warning("%s:%d: skipping unreadable cache record", self.path, n)

    @classmethod
    def for_provider(cls, root: str | Path, provider: str, model: str) -> "ResponseCache":
        safe = "".join(ch if ch.isalnum() or ch in "-._" else "_" for ch in f"{provider}__{model}")
        return cls(Path(root) / f"{safe}.jsonl")

    def get(self, key: str) -> str | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, raw: str) -> None:
        with self._lock:
            if key in self._data:
                return
            self._data[key] = raw
            self.path.parent.mkdir(parents=True, exist_ok=True)
            rec = {"prompt_hash": key, "raw_response": raw, "timestamp": time.time()}
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._data)


class HttpChatProvider:
    cacheable = True

    def __init__(self, cfg: ProviderConfig, transport: httpx.BaseTransport | None = None):
        if not cfg.endpoint:
            raise ProviderError(f"provider {cfg.name!r}: no endpoint configured")
        self.cfg = cfg
        self.name, self.model = cfg.name, cfg.model
        headers = {"content-type": "application/json"}
        if cfg.auth_env:
            token = os.environ.get(cfg.auth_env)
            if not token:
                raise ProviderError(f"provider {cfg.name!r}: environment variable {cfg.auth_env} is not set")
            headers["authorization"] = f"Bearer {token}"
        self.client = httpx.Client(timeout=cfg.timeout, headers=headers, transport=transport)

    def complete(self, prompt: PersonaPrompt) -> str:
        url = self.cfg.endpoint.rstrip("/") + "/chat/completions"
        body = {"model": self.cfg.model, "temperature": self.cfg.temperature,
                "messages": [{"role": "user", "content": prompt.text}]}
        last: Exception | None = None
        for attempt in range(self.cfg.retries + 1):
            try:
                resp = self.client.post(url, json=body)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                log.warning("%s: attempt %d failed: %s", self.name, attempt + 1, exc)
                if attempt < self.cfg.retries:
                    time.sleep(min(0.5 * 2 ** attempt, 8.0))
        raise ProviderError(f"provider {self.name!r} failed after {self.cfg.retries + 1} attempts: {last}")


class OracleProvider:
    """Test mock: the known positive first, everything else in IRL order."""

    cacheable = False

    def __init__(self, positives: Mapping[tuple[str, UserId], ItemId], name: str = "oracle"):
        self.positives = positives
        self.name, self.model = name, "mock"

    def complete(self, prompt: PersonaPrompt) -> str:
        order = prompt.irl_order
        pos = self.positives.get((prompt.stage, prompt.user_id))
        if pos in order:
            order = [pos] + [i for i in order if i != pos]
        return format_ranking(order, prompt.irl_order)


class AdversaryProvider:
    """Test mock: reversed IRL order."""

    cacheable = False

    def __init__(self, name: str = "adversary"):
        self.name, self.model = name, "mock"

    def complete(self, prompt: PersonaPrompt) -> str:
        return format_ranking(prompt.irl_order[::-1], prompt.irl_order)


class ReplayProvider:
    """Serves cached responses only; a miss is a provider error."""

    cacheable = True

    def __init__(self, name: str, model: str):
        self.name, self.model = name, model

    def complete(self, prompt: PersonaPrompt) -> str:
        raise ProviderError(f"replay provider {self.name!r}: no cached response for prompt {prompt.hash[:12]}")


def make_provider(cfg: ProviderConfig, positives: Mapping[tuple[str, UserId], ItemId] | None = None,
                  transport: httpx.BaseTransport | None = None) -> Provider:
    if cfg.kind == "http":
        return HttpChatProvider(cfg, transport)
    if cfg.kind == "oracle":
        return OracleProvider(positives or {}, cfg.name)
    if cfg.kind == "adversary":
        return AdversaryProvider(cfg.name)
    if cfg.kind == "replay":
        return ReplayProvider(cfg.name, cfg.model)
    raise ProviderError(f"unknown provider kind {cfg.kind!r}")


def query_provider(provider: Provider, prompt: PersonaPrompt, cache: ResponseCache | None = None) -> str:
    """Raw reply text, from the cache when possible."""
    if cache is not None and provider.cacheable:
        hit = cache.get(prompt.hash)
        if hit is not None:
            return hit
    raw = provider.complete(prompt)
    if cache is not None and provider.cacheable:
        cache.put(prompt.hash, raw)
    return raw


def query_many(provider: Provider, prompts: Sequence[PersonaPrompt], cache: ResponseCache | None = None,
               concurrency: int = 4) -> list[str | ProviderError]:
    """Replies in prompt order; failures come back as ProviderError values."""

    def one(prompt: PersonaPrompt) -> str | ProviderError:
        try:
            return query_provider(provider, prompt, cache)
        except ProviderError as exc:
            return exc

    if concurrency <= 1 or len(prompts) <= 1:
        return [one(p) for p in prompts]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(one, prompts))
