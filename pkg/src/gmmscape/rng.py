"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, counter)``, so results do
not depend on evaluation order, chunking or thread count. The mixing function
is the SplitMix64 finalizer.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM = np.uint64(0xD1B54A32D192ED03)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _key(seed: int, stream: int) -> np.uint64:
    with np.errstate(over="ignore"):
        s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        k = _mix(np.array([s ^ (np.uint64(stream) * _STREAM)], dtype=np.uint64))
    return k[0]


def random_bits(seed: int, stream: int, counters) -> np.ndarray:
    """64 random bits per counter value."""
    c = np.asarray(counters).astype(np.uint64, copy=False)
    with np.errstate(over="ignore"):
        return _mix(_key(seed, stream) + (c + np.uint64(1)) * _GOLDEN)


def uniform(seed: int, stream: int, counters) -> np.ndarray:
    """Uniform doubles in the open interval (0, 1)."""
    bits = random_bits(seed, stream, counters) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def standard_normal(seed: int, stream: int, counters, dim: int) -> np.ndarray:
    """``len(counters) x dim`` standard normals via Box-Muller.

    Column ``j`` uses the stream pair ``(stream + 2j, stream + 2j + 1)``.
    """
    c = np.asarray(counters)
    out = np.empty((c.shape[0], dim))
    for j in range(dim):
        u1 = uniform(seed, stream + 2 * j, c)
        u2 = uniform(seed, stream + 2 * j + 1, c)
        out[:, j] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return out


def content_keys(rows: np.ndarray) -> np.ndarray:
    """Hash each row of a float array to a uint64 counter.

    Identical rows map to identical keys regardless of their position, which
    is what makes seeded stages invariant to input permutation.
    """
    a = np.ascontiguousarray(rows, dtype=np.float64) + 0.0  # folds -0.0 into 0.0
    words = a.view(np.uint64).reshape(a.shape[0], -1)
    h = np.full(a.shape[0], np.uint64(0x243F6A8885A308D3), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(words.shape[1]):
            h = _mix(h ^ (words[:, j] + _GOLDEN))
    return h


def entropy_seed() -> int:
    return int(np.random.SeedSequence().entropy % (2**63))
