"""Distribution-to-distribution rigid registration of two mixtures.

The objective is the negated closed-form L2 inner product between the
spatially transformed source mixture and the target mixture, using the 3D
spatial marginals of both (intensity is ignored):

    f(T) = -sum_ab pi_a pi_b N(R mu_a + t | mu_b, R C_a R^T + C_b)

This is a stand-in objective for the anisotropic / isoplanar variants; it is
not a reproduction of any particular published formulation.

Perturbations are applied on the left, ``T <- (exp(omega), v) * T``, with
tangent coordinates ordered ``(omega, v)``. Gradient and Hessian are
analytic in those coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _l2kernel, lie
from .model import Gmm4, RigidTransform


@dataclass(frozen=True)
class Mixture3:
    """Spatial marginal of a mixture."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    @classmethod
    def from_gmm(cls, model: Gmm4) -> "Mixture3":
        return cls(model.weights, model.means[:, :3].copy(), model.covariances[:, :3, :3].copy())

    def transformed(self, T: RigidTransform) -> "Mixture3":
        R = T.rotation
        return Mixture3(self.weights, T.apply(self.means), R @ self.covs @ R.T)


@dataclass(frozen=True)
class RegistrationParams:
    max_iters: int = 200
    grad_tol: float = 1e-8
    planar_ratio: float = 1e-4
    prune: float = 1e-14
    # isoplanar coarse-to-fine schedule: both mixtures' covariances are
    # inflated by (s * extent)^2 I for each s in turn before the unsmoothed pass
    continuation: tuple[float, ...] = (0.15, 0.07, 0.03)


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    final_cost: float
    iterations: int
    converged: bool


def _pair_weights(src: Mixture3, tgt: Mixture3) -> np.ndarray:
    return _l2kernel.pair_densities(src.weights, src.means, src.covs,
                                    tgt.weights, tgt.means, tgt.covs)


def _cost(src: Mixture3, tgt: Mixture3) -> float:
    return -float(_pair_weights(src, tgt).sum())


def _cost_derivatives(src: Mixture3, tgt: Mixture3, hessian: bool, prune: float = 0.0):
    """Cost, gradient and (optionally) Hessian at the identity perturbation.

    With ``prune > 0`` pairs contributing less than ``prune`` times the largest
    pair term are left out of the derivatives (never out of the cost).
    """
    wn = _pair_weights(src, tgt)
    f = -float(wn.sum())
    threshold = prune * wn.max() if prune > 0 else -1.0
    grad, hess = _l2kernel.derivatives(src.weights, src.means, src.covs,
                                       tgt.weights, tgt.means, tgt.covs,
                                       wn, threshold, hessian)
    return (f, grad, hess) if hessian else (f, grad)


def l2_cost(source: Gmm4, target: Gmm4, T: RigidTransform) -> float:
    return _cost(Mixture3.from_gmm(source).transformed(T), Mixture3.from_gmm(target))


def l2_cost_grad(source: Gmm4, target: Gmm4, T: RigidTransform) -> tuple[float, np.ndarray]:
    """Cost and its gradient w.r.t. a left tangent perturbation ``(omega, v)``."""
    return _cost_derivatives(Mixture3.from_gmm(source).transformed(T), Mixture3.from_gmm(target),
                             hessian=False)


def l2_cost_hessian(source: Gmm4, target: Gmm4, T: RigidTransform):
    return _cost_derivatives(Mixture3.from_gmm(source).transformed(T), Mixture3.from_gmm(target),
                             hessian=True)


def retract(xi, T: RigidTransform) -> RigidTransform:
    """``(exp(omega), v) * T``."""
    xi = np.asarray(xi, dtype=np.float64)
    dR = lie.so3_exp(xi[:3])
    R = lie.orthonormalize(dR @ T.rotation)
    return RigidTransform(R, dR @ T.translation + xi[3:])


def flatten_mixture(mix: Mixture3, eps: float) -> Mixture3:
    """Replace each covariance's smallest eigenvalue with ``eps``."""
    vals, vecs = np.linalg.eigh(mix.covs)
    vals = vals.copy()
    vals[:, 0] = eps
    covs = np.einsum("pij,pj,pkj->pik", vecs, vals, vecs)
    return Mixture3(mix.weights, mix.means, 0.5 * (covs + np.swapaxes(covs, 1, 2)))


def inflate_mixture(mix: Mixture3, var: float) -> Mixture3:
    return Mixture3(mix.weights, mix.means, mix.covs + var * np.eye(3))


def mixture_extent(mix: Mixture3) -> float:
    return float(np.ptp(mix.means, axis=0).max())


def planar_epsilon(mix: Mixture3, ratio: float) -> float:
    return ratio * float(np.linalg.eigvalsh(mix.covs).max())


def _optimize(Tinit: RigidTransform, src: Mixture3, tgt: Mixture3,
              params: RegistrationParams) -> RegistrationResult:
    T = Tinit
    lam = 1e-4
    iters = 0
    converged = False
    f = _cost(src.transformed(T), tgt)
    for _ in range(params.max_iters):
        moved = src.transformed(T)
        f, g, H = _cost_derivatives(moved, tgt, hessian=True, prune=params.prune)
        if not np.isfinite(f) or not np.isfinite(g).all():
            raise FloatingPointError("non-finite registration cost")
        if np.linalg.norm(g) <= params.grad_tol * max(1.0, abs(f)):
            converged = True
            break
        evals, evecs = np.linalg.eigh(H)
        scale = max(np.abs(evals).max(), 1e-300)
        accepted = False
        while lam < 1e12:
            shift = max(0.0, -evals.min()) + lam * scale
            step = -evecs @ ((evecs.T @ g) / (evals + shift))
            T_new = retract(step, T)
            f_new = _cost(src.transformed(T_new), tgt)
            if np.isfinite(f_new) and f_new < f:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            converged = np.linalg.norm(g) <= 1e3 * params.grad_tol * max(1.0, abs(f))
            break
        T, f = T_new, f_new
        lam = max(lam / 3.0, 1e-12)
        iters += 1
        if np.linalg.norm(step) < 1e-14:
            converged = True
            break
    return RegistrationResult(T, float(f), iters, converged)


def anisotropic_registration(Tinit: RigidTransform, source: Gmm4, target: Gmm4,
                             params: RegistrationParams = RegistrationParams()) -> RegistrationResult:
    return _optimize(Tinit, Mixture3.from_gmm(source), Mixture3.from_gmm(target), params)


def isoplanar_registration(Tinit: RigidTransform, source: Gmm4, target: Gmm4,
                           params: RegistrationParams = RegistrationParams()) -> RegistrationResult:
    src, tgt = Mixture3.from_gmm(source), Mixture3.from_gmm(target)
    src = flatten_mixture(src, planar_epsilon(src, params.planar_ratio))
    tgt = flatten_mixture(tgt, planar_epsilon(tgt, params.planar_ratio))
    extent = max(mixture_extent(src), mixture_extent(tgt))
    T = Tinit
    for s in params.continuation:
        var = (s * extent) ** 2
        T = _optimize(T, inflate_mixture(src, var), inflate_mixture(tgt, var), params).transform
    return _optimize(T, src, tgt, params)


def isoplanar_hybrid_registration(Tinit: RigidTransform, source: Gmm4, target: Gmm4,
                                  params: RegistrationParams = RegistrationParams()
                                  ) -> RegistrationResult:
    """Isoplanar coarse alignment refined by the anisotropic objective."""
    coarse = isoplanar_registration(Tinit, source, target, params)
    return anisotropic_registration(coarse.transform, source, target, params)


VARIANTS = {
    "anisotropic": anisotropic_registration,
    "isoplanar": isoplanar_registration,
    "hybrid": isoplanar_hybrid_registration,
}
