"""Keyed-hash randomness: every stochastic choice in the engine is a pure
function of (seed, label parts), so reruns are bit-identical across
processes and platforms."""

from __future__ import annotations

import hashlib
from statistics import NormalDist
from typing import Sequence, TypeVar

T = TypeVar("T")

_MASK64 = (1 << 64) - 1
_FIELD_SEP = "\x1f"


def hash64(seed: int, *parts: object) -> int:
    """64-bit keyed blake2b of the stringified parts."""
    key = (seed & _MASK64).to_bytes(8, "little")
    msg = _FIELD_SEP.join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(msg, key=key, digest_size=8).digest(), "big")


def unit_float(seed: int, *parts: object) -> float:
    """Uniform in the open interval (0, 1); never exactly 0 or 1."""
    return (hash64(seed, *parts) + 0.5) / 2.0**64


def gauss(seed: int, mean: float, stddev: float, *parts: object) -> float:
    """Gaussian draw via inverse CDF of a single uniform."""
    return NormalDist(mean, stddev).inv_cdf(unit_float(seed, *parts))


def choice(seed: int, options: Sequence[T], *parts: object) -> T:
    if not options:
        raise ValueError("choice() requires a non-empty sequence")
    return options[hash64(seed, *parts) % len(options)]


def weighted_choice(seed: int, weights: dict[str, float], *parts: object) -> str:
    """Pick a key with probability proportional to its weight.

    Keys are iterated in sorted order so the mapping's insertion order
    cannot affect the draw.
    """
    total = sum(weights.values())
    if total <= 0:
        raise ValueError("weighted_choice() requires positive total weight")
    u = unit_float(seed, *parts) * total
    acc = 0.0
    keys = sorted(weights)
    for k in keys:
        acc += weights[k]
        if u < acc:
            return k
    return keys[-1]
