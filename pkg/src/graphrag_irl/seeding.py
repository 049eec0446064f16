"""Stable sub-seed derivation and content hashing."""

from __future__ import annotations

import hashlib
import json
from typing import Any


def derive_seed(master: int, *parts: Any) -> int:
    """Derive a 63-bit seed from a master seed and a path of labels.

    The derivation is sha256 over ``"master/part1/part2/..."`` so it is
    stable across processes and Python versions (unlike ``hash()``).
    """
    key = "/".join([str(int(master))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def content_hash(obj: Any, length: int = 12) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:length]
