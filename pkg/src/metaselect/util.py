"""Seed derivation, canonical JSON, and small statistics helpers."""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any, Sequence

import numpy as np

from .errors import ConfigurationError

_SEP = "\x1f"


def derive_seed(*parts: int | str) -> int:
    """Derive a 63-bit seed from a root seed and a path of tags.

    Stable across platforms and processes; used everywhere a stochastic
    operation needs its own independent, reproducible stream.
    """
    payload = _SEP.join(str(p) for p in parts)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def canonical_dumps(obj: Any) -> str:
    """Serialize to JSON with a stable byte representation (sorted keys, no NaN)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_hash(obj: Any) -> str:
    """Short hex digest of an object's canonical JSON form."""
    return hashlib.sha256(canonical_dumps(obj).encode("utf-8")).hexdigest()[:16]


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float, float]:
    """Mean with a two-sided Student-t confidence interval.

    Returns (mean, ci_low, ci_high). A single observation yields a
    zero-width interval.
    """
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ConfigurationError("cannot summarize an empty sample")
    mean = float(arr.mean())
    if arr.size == 1:
        return mean, mean, mean
    from scipy import stats

    sem = float(arr.std(ddof=1)) / math.sqrt(arr.size)
    half = float(stats.t.ppf(0.5 + confidence / 2.0, arr.size - 1)) * sem
    return mean, mean - half, mean + half


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def dump_json(path, obj: Any) -> None:
    """Write JSON with deterministic bytes (sorted keys, fixed layout)."""
    import os

    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
    os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
