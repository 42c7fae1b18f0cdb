"""Generative queries on a fitted model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .kernels import batched_cholesky, logsumexp_rows, map_chunks
from .model import Gmm4, PointCloud4D, cholesky_cache
from .sogmm import score_samples

_STREAM_COMPONENT = 0
_STREAM_NORMAL = 16


@dataclass(frozen=True, eq=False)
class ConditionalResult:
    expected_intensity: np.ndarray
    variance: np.ndarray
    raw_expected_intensity: np.ndarray  # before clamping to [0, 1]


def sample_components(model: Gmm4, n: int, seed: int) -> np.ndarray:
    u = rng.uniform(seed, _STREAM_COMPONENT, np.arange(n))
    cdf = np.cumsum(model.weights)
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), model.n_components - 1)


def joint_dist_sample(model: Gmm4, n: int, seed: int, clip_intensity: bool = False
                      ) -> np.ndarray:
    """Draw ``n`` 4D samples; sample ``k`` depends only on ``(seed, k)``.

    Returns a raw ``n x 4`` array since Gaussian tails can leave [0, 1] in
    the intensity column; pass ``clip_intensity=True`` to clamp it.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    comp = sample_components(model, n, seed)
    z = rng.standard_normal(seed, _STREAM_NORMAL, np.arange(n), 4)
    L = cholesky_cache(model).factors
    x = model.means[comp] + np.einsum("nij,nj->ni", L[comp], z)
    if clip_intensity:
        np.clip(x[:, 3], 0.0, 1.0, out=x[:, 3])
    return x


def sample_cloud(model: Gmm4, n: int, seed: int) -> PointCloud4D:
    return PointCloud4D(joint_dist_sample(model, n, seed, clip_intensity=True))


def color_conditional(model: Gmm4, locs: np.ndarray, clamp: bool = True) -> ConditionalResult:
    """Mean and variance of intensity given 3D location under the 4D mixture.

    Each component is conditioned on its spatial block; gate weights come from
    the spatial marginals. Where every gate density underflows, the component
    with the smallest spatial Mahalanobis distance takes all the weight.
    """
    locs = np.asarray(locs, dtype=np.float64).reshape(-1, 3)
    S = model.covariances
    Sxx = S[:, :3, :3]
    Sxi = S[:, :3, 3]
    Sii = S[:, 3, 3]
    mu_x = model.means[:, :3]
    mu_i = model.means[:, 3]

    Lx = batched_cholesky(Sxx)
    Lx_inv = np.linalg.inv(Lx)
    gain = np.linalg.solve(Sxx, Sxi[:, :, None])[:, :, 0]       # Sxx^-1 Sxi
    s_cond = Sii - np.einsum("bi,bi->b", Sxi, gain)
    logdet = np.log(np.diagonal(Lx, axis1=1, axis2=2)).sum(axis=1)

    log_w = np.log(model.weights)
    E = np.empty(locs.shape[0])
    V = np.empty(locs.shape[0])

    def run(s, e):
        diff = locs[s:e, None, :] - mu_x[None, :, :]             # n x M x 3
        white = np.einsum("bij,nbj->nbi", Lx_inv, diff)
        maha = (white**2).sum(axis=2)
        log_gate = log_w - 0.5 * (3 * math.log(2 * math.pi) + maha) - logdet
        lse = logsumexp_rows(log_gate)
        with np.errstate(invalid="ignore"):
            w = np.exp(log_gate - lse[:, None])
        dead = ~np.isfinite(lse)
        if dead.any():
            w[dead] = 0.0
            w[dead, np.argmin(maha[dead], axis=1)] = 1.0
        m = mu_i[None, :] + np.einsum("nbi,bi->nb", diff, gain)
        E[s:e] = (w * m).sum(axis=1)
        # sum w (s + m^2) - E^2, written about E to avoid cancellation
        V[s:e] = (w * (s_cond[None, :] + (m - E[s:e, None]) ** 2)).sum(axis=1)

    map_chunks(run, locs.shape[0], max(16, (1 << 18) // model.n_components))
    if (V < -1e-12).any():
        raise FloatingPointError("negative conditional variance")
    V = np.maximum(V, 0.0)
    return ConditionalResult(np.clip(E, 0.0, 1.0) if clamp else E, V, E)


def score(model: Gmm4, cloud) -> float:
    """Average log-likelihood per point."""
    X = cloud.points if isinstance(cloud, PointCloud4D) else np.asarray(cloud, dtype=np.float64)
    return float(math.fsum(score_samples(X, model)) / X.shape[0])
