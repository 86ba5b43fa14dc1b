"""Stable content digests and seed-derived random streams.

Every random decision in the pipeline goes through ``derive_rng`` so that
parallel and serial runs agree: each unit of work gets its own stream keyed
by the pipeline seed plus stable identifiers, never by iteration order.
"""

from __future__ import annotations

import hashlib
import json
import random


def stable_digest(obj) -> str:
    """Hex digest of a JSON-serializable object, stable across processes."""
    payload = json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def derive_rng(seed: int, *parts) -> random.Random:
    """Independent deterministic random stream for (seed, *parts).

    Built-in hash() is salted per process, so the key is hashed with sha256.
    """
    key = json.dumps([seed, *[str(p) for p in parts]], ensure_ascii=False)
    h = hashlib.sha256(key.encode("utf-8")).digest()
    return random.Random(int.from_bytes(h[:8], "big"))
