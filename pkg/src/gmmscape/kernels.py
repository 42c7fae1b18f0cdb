"""Batched small-matrix and reduction kernels.

Blocks are stored contiguously as ``(B, n, n)`` arrays and every routine is
vectorized across the batch axis, the CPU stand-in for strided-batch GPU
routines. Row reductions are split into fixed-size chunks whose partial
results are combined in chunk order, so outputs are bit-identical for any
thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from typing import Callable, NamedTuple, Sequence, TypeVar

import numpy as np
from threadpoolctl import threadpool_limits

EPS_COUNT = 1e-10
ROW_CHUNK = 4096

_num_threads: int | None = None

T = TypeVar("T")


class NotPositiveDefiniteError(ValueError):
    def __init__(self, index: int, message: str | None = None):
        self.index = int(index)
        super().__init__(message or f"block {self.index} is not positive definite")


class SingularFactorError(ValueError):
    def __init__(self, index: int):
        self.index = int(index)
        super().__init__(f"factor {self.index} has a zero diagonal entry")


def get_num_threads() -> int:
    if _num_threads is not None:
        return _num_threads
    env = os.environ.get("GMMSCAPE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def set_num_threads(n: int | None) -> None:
    """Set the global parallelism degree; ``None`` restores the default."""
    global _num_threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = n


def chunk_bounds(n: int, chunk: int = ROW_CHUNK) -> list[tuple[int, int]]:
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def map_chunks(fn: Callable[[int, int], T], n: int, chunk: int = ROW_CHUNK,
               threads: int | None = None) -> list[T]:
    """Apply ``fn(start, stop)`` to fixed row chunks; results in chunk order."""
    bounds = chunk_bounds(n, chunk)
    threads = get_num_threads() if threads is None else threads
    threads = min(threads, len(bounds))
    if threads <= 1:
        return [fn(s, e) for s, e in bounds]
    # one BLAS thread per worker, otherwise the pools oversubscribe
    with threadpool_limits(limits=1), ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


def ordered_sum(parts: Sequence[np.ndarray]) -> np.ndarray:
    total = np.array(parts[0], copy=True)
    for p in parts[1:]:
        total += p
    return total


def batched_cholesky(blocks: np.ndarray) -> np.ndarray:
    """Lower Cholesky factors of a ``(B, n, n)`` stack of SPD blocks.

    Column-by-column Cholesky-Banachiewicz, vectorized over the batch. The
    arithmetic on each block touches only that block, so the result does not
    depend on batch order.
    """
    A = np.asarray(blocks, dtype=np.float64)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError(f"expected (B, n, n) blocks, got {A.shape}")
    B, n, _ = A.shape
    L = np.zeros_like(A)
    for j in range(n):
        d = A[:, j, j] - np.einsum("bk,bk->b", L[:, j, :j], L[:, j, :j])
        bad = ~(d > 0.0) | ~np.isfinite(d)
        if bad.any():
            raise NotPositiveDefiniteError(int(np.flatnonzero(bad)[0]))
        ljj = np.sqrt(d)
        L[:, j, j] = ljj
        if j + 1 < n:
            off = A[:, j + 1:, j] - np.einsum("bik,bk->bi", L[:, j + 1:, :j], L[:, j, :j])
            L[:, j + 1:, j] = off / ljj[:, None]
    return L


def batched_tri_solve(factors: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``L x = rhs`` per block by forward substitution.

    ``rhs`` is ``(B, n)`` or ``(B, n, k)``.
    """
    L = np.asarray(factors, dtype=np.float64)
    b = np.asarray(rhs, dtype=np.float64)
    vec = b.ndim == 2
    if vec:
        b = b[:, :, None]
    diag = np.diagonal(L, axis1=1, axis2=2)
    zero = (diag == 0.0).any(axis=1)
    if zero.any():
        raise SingularFactorError(int(np.flatnonzero(zero)[0]))
    n = L.shape[1]
    x = np.empty_like(b)
    for i in range(n):
        acc = b[:, i, :] - np.einsum("bk,bkc->bc", L[:, i, :i], x[:, :i, :])
        x[:, i, :] = acc / diag[:, i, None]
    return x[:, :, 0] if vec else x


def batched_tri_inverse(factors: np.ndarray) -> np.ndarray:
    L = np.asarray(factors, dtype=np.float64)
    eye = np.broadcast_to(np.eye(L.shape[1]), L.shape)
    return batched_tri_solve(L, eye)


def logsumexp_rows(log_matrix: np.ndarray) -> np.ndarray:
    """Row-wise ``ln sum exp`` with the max-shift identity.

    Rows that are entirely ``-inf`` give ``-inf``.
    """
    a = np.asarray(log_matrix, dtype=np.float64)
    m = a.max(axis=1)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.exp(a - shift[:, None]).sum(axis=1))
    return s + shift


class Moments(NamedTuple):
    counts: np.ndarray     # (M,)
    means: np.ndarray      # (M, D)
    scatters: np.ndarray   # (M, D, D), normalized by counts
    degenerate: np.ndarray  # (M,) bool, counts < EPS_COUNT


def weighted_moments(points: np.ndarray, resp: np.ndarray,
                     chunk: int = ROW_CHUNK) -> Moments:
    """Per-component moments of the responsibility-weighted points (see ``Moments``).

    Two passes over fixed row chunks: means first, then scatter about those
    means. Degenerate components get NaN moments and are flagged.
    """
    X = np.asarray(points, dtype=np.float64)
    R = np.asarray(resp, dtype=np.float64)
    N, D = X.shape

    def first(s, e):
        return R[s:e].sum(axis=0), R[s:e].T @ X[s:e]

    parts = map_chunks(first, N, chunk)
    counts = ordered_sum([p[0] for p in parts])
    sums = ordered_sum([p[1] for p in parts])
    degenerate = counts < EPS_COUNT
    safe = np.where(degenerate, 1.0, counts)
    means = sums / safe[:, None]

    def second(s, e):
        d = X[s:e, None, :] - means[None, :, :]          # (c, M, D)
        w = R[s:e, :, None] * d
        return np.einsum("nmi,nmj->mij", w, d)

    scat = ordered_sum(map_chunks(second, N, chunk)) / safe[:, None, None]
    means[degenerate] = np.nan
    scat[degenerate] = np.nan
    return Moments(counts, means, scat, degenerate)
