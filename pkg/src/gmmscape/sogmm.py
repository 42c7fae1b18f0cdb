"""Self-organizing GMM fitting: GBMS -> KInit -> log-space EM."""

from __future__ import annotations

import logging
import math
from itertools import chain
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import rng
from ._emkernel import sparse_em_pass
from .kernels import (EPS_COUNT, get_num_threads, logsumexp_rows, map_chunks,
                      ordered_sum, weighted_moments)
from .model import D, CholeskyCache, Gmm4, PointCloud4D, cholesky_cache

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
# above this many point-component pairs EM switches to the truncated sparse pass
SPARSE_MIN_PAIRS = 1 << 22
TRUNCATION_SIGMAS = 8.0
_IU, _JU = np.triu_indices(D)


@dataclass(frozen=True)
class GbmsParams:
    bandwidth: float
    max_iters: int = 100
    convergence_tol: float = 1e-5
    merge_radius: float | None = None  # defaults to bandwidth / 2

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.max_iters < 1 or self.convergence_tol <= 0:
            raise ValueError("max_iters >= 1 and convergence_tol > 0 required")
        if self.merge_radius is not None and self.merge_radius <= 0:
            raise ValueError("merge_radius must be positive")

    @property
    def merge(self) -> float:
        return self.bandwidth / 2 if self.merge_radius is None else self.merge_radius


@dataclass(frozen=True)
class EmParams:
    max_iters: int = 100
    ll_rel_tol: float = 1e-5
    cov_reg: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.cov_reg < 0 or self.ll_rel_tol <= 0 or self.max_iters < 1:
            raise ValueError("invalid EM parameters")


@dataclass(frozen=True, eq=False)
class Responsibilities:
    log_gamma: np.ndarray  # N x M

    @property
    def linear(self) -> np.ndarray:
        return np.exp(self.log_gamma)


@dataclass
class FitResult:
    model: Gmm4
    n_seeds: int
    gbms_components: int
    iterations: int
    log_likelihood: float
    history: list[float] = field(default_factory=list)
    converged: bool = False


def _as_points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud4D) else np.asarray(cloud, dtype=np.float64)


def normalize_unit_box(points: np.ndarray) -> np.ndarray:
    """Per-dimension min-max scaling to [0, 1]; constant columns map to 0."""
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    span[span == 0] = 1.0
    return (points - lo) / span


# -- GBMS -----------------------------------------------------------------------

def bin_seeds(Y: np.ndarray, bin_size: float) -> np.ndarray:
    """Centroid of the points in every occupied cubic bin."""
    cells = np.floor(Y / bin_size).astype(np.int64)
    _, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)
    sums = np.stack([np.bincount(inverse, weights=Y[:, j]) for j in range(Y.shape[1])], axis=1)
    return sums / counts[:, None]


def _merge_modes(modes: np.ndarray, support: np.ndarray, radius: float) -> np.ndarray:
    n = len(modes)
    pairs = cKDTree(modes).query_pairs(radius, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_groups, labels = connected_components(graph, directed=False)
    # representative = densest member, ties to the lexicographically smallest mode
    order = np.lexsort(tuple(modes[:, j] for j in reversed(range(modes.shape[1]))) + (-support, labels))
    first = np.ones(n, dtype=bool)
    first[1:] = labels[order][1:] != labels[order][:-1]
    return modes[order[first]]


def gbms_estimate_components(cloud, params: GbmsParams) -> tuple[int, np.ndarray]:
    """Number of density modes of the unit-box-normalized cloud.

    Seeds start at bin centroids and repeatedly move to the mean of the data
    points within ``bandwidth``; converged seeds closer than the merge radius
    are joined by single linkage. Returns ``(K, modes)`` with modes in the
    normalized space.
    """
    X = _as_points(cloud)
    if X.shape[0] == 0:
        raise ValueError("empty point cloud")
    Y = normalize_unit_box(X)
    h = params.bandwidth
    tree = cKDTree(Y)
    seeds = bin_seeds(Y, h)
    support = np.zeros(len(seeds), dtype=np.int64)
    workers = get_num_threads()
    for it in range(params.max_iters):
        nbrs = tree.query_ball_point(seeds, h, workers=workers, return_sorted=True)
        support = np.fromiter((len(n) for n in nbrs), dtype=np.int64, count=len(nbrs))
        if it == 0 and (support == 0).any():
            keep = support > 0
            seeds, nbrs, support = seeds[keep], nbrs[keep], support[keep]
        has = support > 0
        flat = np.concatenate([np.asarray(n, dtype=np.int64) for n in nbrs[has]])
        starts = np.concatenate([[0], np.cumsum(support[has])[:-1]])
        new = seeds.copy()
        new[has] = np.add.reduceat(Y[flat], starts, axis=0) / support[has, None]
        shift = np.linalg.norm(new - seeds, axis=1).mean()
        seeds = new
        if shift < params.convergence_tol:
            break
    modes = _merge_modes(seeds, support, params.merge)
    return len(modes), modes


# -- KInit ------------------------------------------------------------------------

def kmeanspp_centers(X: np.ndarray, K: int, seed: int) -> np.ndarray:
    """Indices of k-means++ centers, drawn by an exponential race.

    Round ``r`` gives each point the key ``-ln(u) / w`` where ``w`` is its
    squared distance to the nearest center and ``u`` is keyed on
    ``(seed, r, hash(point))``; the smallest key wins, which samples with
    probability proportional to ``w`` independent of point order.
    """
    N = X.shape[0]
    keys = rng.content_keys(X)
    chosen = np.empty(K, dtype=np.int64)
    d2 = np.ones(N)
    taken = np.zeros(N, dtype=bool)
    for r in range(K):
        e = -np.log(rng.uniform(seed, r, keys))
        w = np.where(taken, 0.0, d2)
        if not (w > 0).any():
            # fewer distinct points than K: fall back to unweighted draws
            w = (~taken).astype(np.float64)
        with np.errstate(divide="ignore"):
            race = np.where(w > 0, e / w, np.inf)
        c = int(np.argmin(race))
        chosen[r] = c
        taken[c] = True
        d2 = np.minimum(d2, ((X - X[c]) ** 2).sum(axis=1)) if r else ((X - X[c]) ** 2).sum(axis=1)
    return chosen


def kinit(cloud, K: int, seed: int) -> Responsibilities:
    """Hard responsibilities from k-means++ seeding and one nearest-center pass."""
    X = _as_points(cloud)
    N = X.shape[0]
    if not 1 <= K <= N:
        raise ValueError(f"K={K} must be between 1 and N={N}")
    centers = kmeanspp_centers(X, K, seed)
    _, assign = cKDTree(X[centers]).query(X, workers=get_num_threads())
    assign[centers] = np.arange(K)
    log_gamma = np.full((N, K), -np.inf)
    log_gamma[np.arange(N), assign] = 0.0
    return Responsibilities(log_gamma)


# -- EM -----------------------------------------------------------------------------

def _stacked(cache: CholeskyCache, means: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Precision rows stacked dimension-major: column ``j*M + b`` is row ``j`` of P_b."""
    P = cache.precisions
    M = P.shape[0]
    off = np.einsum("bij,bj->bi", P, means)
    return P.transpose(1, 0, 2).reshape(D * M, D), off.T.reshape(D * M)


def log_gaussian(X: np.ndarray, model: Gmm4, cache: CholeskyCache | None = None) -> np.ndarray:
    """``N x M`` matrix of ``ln N(x_n | mu_b, Sigma_b)`` through the precision factors."""
    cache = cholesky_cache(model) if cache is None else cache
    Pst, off = _stacked(cache, model.means)
    return _log_gauss_rows(np.asarray(X, dtype=np.float64), Pst, off, cache.log_det_terms)


def _log_gauss_rows(X, Pst, off, logdet) -> np.ndarray:
    M = logdet.shape[0]
    Y = X @ Pst.T
    Y -= off
    Y *= Y
    q = Y[:, :M] + Y[:, M:2 * M]
    q += Y[:, 2 * M:3 * M]
    q += Y[:, 3 * M:]
    q += D * LOG_2PI
    q *= -0.5
    q += logdet
    return q


def _normalized_exp(lp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row logsumexp of ``lp`` and ``exp(lp - lse)``; ``lp`` is overwritten."""
    mx = lp.max(axis=1, keepdims=True)
    mx[~np.isfinite(mx)] = 0.0
    lp -= mx
    np.exp(lp, out=lp)
    s = lp.sum(axis=1, keepdims=True)
    lp /= s
    with np.errstate(divide="ignore"):
        return (np.log(s) + mx)[:, 0], lp


def _chunk_rows(M: int) -> int:
    return int(min(4096, max(64, (1 << 20) // (D * M))))


def e_step(cloud, model: Gmm4, cache: CholeskyCache | None = None
           ) -> tuple[Responsibilities, float]:
    X = _as_points(cloud)
    cache = cholesky_cache(model) if cache is None else cache
    Pst, off = _stacked(cache, model.means)
    log_w = np.log(model.weights)
    out = np.empty((X.shape[0], model.n_components))

    def run(s, e):
        lp = _log_gauss_rows(X[s:e], Pst, off, cache.log_det_terms) + log_w
        lse = logsumexp_rows(lp)
        out[s:e] = lp - lse[:, None]
        return lse.sum()

    parts = map_chunks(run, X.shape[0], _chunk_rows(model.n_components))
    return Responsibilities(out), float(math.fsum(parts))


def _model_from_moments(counts, means, scatters, N: int, cov_reg: float) -> Gmm4:
    keep = counts >= EPS_COUNT
    if not keep.all():
        log.info("removing %d degenerate component(s)", int((~keep).sum()))
    if not keep.any():
        raise ValueError("every component is degenerate")
    counts, means, scatters = counts[keep], means[keep], scatters[keep]
    w = counts / N
    w = w / w.sum()
    covs = 0.5 * (scatters + np.swapaxes(scatters, 1, 2)) + cov_reg * np.eye(D)
    return Gmm4.from_full(w, means, covs)


def m_step(cloud, resp: Responsibilities, cov_reg: float) -> Gmm4:
    X = _as_points(cloud)
    R = np.exp(resp.log_gamma)
    mom = weighted_moments(X, R)
    return _model_from_moments(mom.counts, mom.means, mom.scatters, X.shape[0], cov_reg)


def em_iteration(X: np.ndarray, model: Gmm4, cov_reg: float,
                 tree: cKDTree | None = None) -> tuple[float, Gmm4]:
    """One fused E+M pass without materializing the N x M responsibilities.

    Returns the log-likelihood of ``model`` and the updated model. Second
    moments are accumulated about the global data mean to limit cancellation.
    Large problems take the truncated sparse path when ``tree`` (a KD-tree
    over ``X``) is given.
    """
    if tree is not None and X.shape[0] * model.n_components > SPARSE_MIN_PAIRS:
        return _sparse_em_iteration(X, tree, model, cov_reg)
    cache = cholesky_cache(model)
    Pst, off = _stacked(cache, model.means)
    log_w = np.log(model.weights)
    center = X.mean(axis=0)
    M = model.n_components

    def run(s, e):
        Xc = X[s:e] - center
        lp = _log_gauss_rows(X[s:e], Pst, off, cache.log_det_terms)
        lp += log_w
        lse, R = _normalized_exp(lp)
        outer = Xc[:, _IU] * Xc[:, _JU]
        return lse.sum(), R.sum(axis=0), R.T @ Xc, R.T @ outer

    parts = map_chunks(run, X.shape[0], _chunk_rows(M))
    ll = math.fsum(p[0] for p in parts)
    counts = ordered_sum([p[1] for p in parts])
    s1 = ordered_sum([p[2] for p in parts])
    s2u = ordered_sum([p[3] for p in parts])
    s2 = np.empty((M, D, D))
    s2[:, _IU, _JU] = s2u
    s2[:, _JU, _IU] = s2u
    return ll, _update_from_sums(counts, s1, s2, center, X.shape[0], cov_reg)


def _update_from_sums(counts, s1, s2, center, N, cov_reg) -> Gmm4:
    safe = np.where(counts < EPS_COUNT, 1.0, counts)
    mu_c = s1 / safe[:, None]
    scat = s2 / safe[:, None, None] - mu_c[:, :, None] * mu_c[:, None, :]
    return _model_from_moments(counts, mu_c + center, scat, N, cov_reg)


def candidate_pairs(tree: cKDTree, model: Gmm4, cutoff: float = TRUNCATION_SIGMAS
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Points within ``cutoff`` standard deviations (along the widest axis) of
    each component, as CSR-style ``(ptr, point_indices)``."""
    radii = cutoff * np.sqrt(np.linalg.eigvalsh(model.covariances)[:, -1])
    lists = tree.query_ball_point(model.means, radii, workers=get_num_threads(),
                                  return_sorted=True)
    lens = np.fromiter(map(len, lists), dtype=np.int64, count=len(lists))
    pts = np.fromiter(chain.from_iterable(lists), dtype=np.int64, count=int(lens.sum()))
    return np.concatenate([[0], np.cumsum(lens)]), pts


def _sparse_em_iteration(X, tree, model: Gmm4, cov_reg: float) -> tuple[float, Gmm4]:
    cache = cholesky_cache(model)
    center = X.mean(axis=0)
    ptr, pts = candidate_pairs(tree, model)
    log_w = np.log(model.weights)
    lse, counts, s1, s2 = sparse_em_pass(X, center, ptr, pts, cache.precisions,
                                         model.means, cache.log_det_terms, log_w)
    lonely = np.flatnonzero(~np.isfinite(lse))
    if lonely.size:
        # points beyond every component's cutoff: exact dense treatment
        Pst, off = _stacked(cache, model.means)
        lp = _log_gauss_rows(X[lonely], Pst, off, cache.log_det_terms)
        lp += log_w
        lse[lonely], R = _normalized_exp(lp)
        Xc = X[lonely] - center
        counts = counts + R.sum(axis=0)
        s1 = s1 + R.T @ Xc
        s2 = s2 + np.einsum("nb,ni,nj->bij", R, Xc, Xc)
    return math.fsum(lse), _update_from_sums(counts, s1, s2, center, X.shape[0], cov_reg)


def score_samples(X: np.ndarray, model: Gmm4) -> np.ndarray:
    """Per-point mixture log-density."""
    cache = cholesky_cache(model)
    Pst, off = _stacked(cache, model.means)
    log_w = np.log(model.weights)
    out = np.empty(X.shape[0])

    def run(s, e):
        out[s:e] = logsumexp_rows(_log_gauss_rows(X[s:e], Pst, off, cache.log_det_terms) + log_w)

    map_chunks(run, X.shape[0], _chunk_rows(model.n_components))
    return out


def run_em(X: np.ndarray, model: Gmm4, params: EmParams) -> tuple[Gmm4, list[float], bool]:
    history: list[float] = []
    converged = False
    tree = cKDTree(X) if X.shape[0] * model.n_components > SPARSE_MIN_PAIRS else None
    for _ in range(params.max_iters):
        ll, updated = em_iteration(X, model, params.cov_reg, tree)
        if history and abs(ll - history[-1]) <= params.ll_rel_tol * abs(history[-1]):
            history.append(ll)
            converged = True
            break
        history.append(ll)
        model = updated
    else:
        history.append(float(math.fsum(score_samples(X, model))))
    return model, history, converged


def canonical_order(X: np.ndarray) -> np.ndarray:
    """Rows sorted lexicographically.

    Fitting works on this order so that every floating-point sum sees the
    same sequence whatever order the caller's points came in.
    """
    return X[np.lexsort(X.T[::-1])]


def fit_k(cloud, K: int, params: EmParams = EmParams()) -> FitResult:
    """KInit + EM with a fixed component count (no GBMS)."""
    X = canonical_order(_as_points(cloud))
    init = m_step(X, kinit(X, K, params.seed), params.cov_reg)
    model, history, converged = run_em(X, init, params)
    return FitResult(model, 0, K, len(history), history[-1], history, converged)


def fit(cloud, bandwidth: float, em_params: EmParams = EmParams(),
        gbms_params: GbmsParams | None = None) -> FitResult:
    """Full SOGMM pipeline on a 4D cloud."""
    X = canonical_order(_as_points(cloud))
    gp = gbms_params or GbmsParams(bandwidth)
    K, _ = gbms_estimate_components(X, gp)
    res = fit_k(X, min(K, X.shape[0]), em_params)
    res.gbms_components = K
    return res


class SOGMM:
    """Small convenience wrapper: ``SOGMM(bandwidth=0.015).fit(points)``."""

    def __init__(self, bandwidth: float, em_params: EmParams = EmParams()):
        self.bandwidth = bandwidth
        self.em_params = em_params
        self.model_: Gmm4 | None = None
        self.result_: FitResult | None = None

    @property
    def n_components_(self) -> int:
        return self.model_.n_components

    def fit(self, points) -> Gmm4:
        self.result_ = fit(points, self.bandwidth, self.em_params)
        self.model_ = self.result_.model
        return self.model_
