"""Shared helpers: named RNG sub-streams and config hashing."""
from __future__ import annotations

import hashlib
import json

import numpy as np


def seed_stream(seed: int, label: str) -> np.random.Generator:
    """Derive a named, independent RNG stream from one 64-bit seed.

    Every source of randomness in the toolkit flows through one of these
    streams (data/init/train/sample/...), so a single seed reproduces a
    whole run.
    """
    tag = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag]))


def child_stream(seed: int, label: str, index: int) -> np.random.Generator:
    """Per-item stream (e.g. one sampling chain); stable under batching."""
    tag = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag, int(index)])
    )


def config_hash(config: dict) -> str:
    """Stable hash of a resolved run configuration, embedded in artifacts."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
