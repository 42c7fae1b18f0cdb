"""Shared domain types, GMM file format and memory accounting."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import lie
from .kernels import NotPositiveDefiniteError, batched_cholesky, batched_tri_inverse

D = 4
PACKED = 10
MAGIC = b"SGMM4D01"
BYTES_PER_FLOAT = 4

# row-major lower triangle of a 4x4 matrix
TRIL_ROWS, TRIL_COLS = np.tril_indices(D)


class GmmFormatError(ValueError):
    """File is not a GMM file (bad magic or malformed JSON)."""


class GmmTruncatedError(GmmFormatError):
    """Payload is shorter than the header promises."""


class InvalidModelError(ValueError):
    pass


def pack_covariances(covs: np.ndarray) -> np.ndarray:
    covs = np.asarray(covs, dtype=np.float64)
    return covs[:, TRIL_ROWS, TRIL_COLS].copy()


def unpack_covariances(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.float64)
    out = np.zeros((packed.shape[0], D, D))
    out[:, TRIL_ROWS, TRIL_COLS] = packed
    out[:, TRIL_COLS, TRIL_ROWS] = packed
    return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PointCloud4D:
    """``N x 4`` samples ``(x, y, z, intensity)``; intensity in [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        p = _frozen(self.points)
        if p.ndim != 2 or p.shape[1] != D:
            raise ValueError(f"expected N x 4 points, got shape {p.shape}")
        if p.shape[0] < 1:
            raise ValueError("point cloud is empty")
        if not np.isfinite(p).all():
            raise ValueError("point cloud has non-finite entries")
        if p[:, 3].min() < 0.0 or p[:, 3].max() > 1.0:
            raise ValueError("intensity column outside [0, 1]")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass(frozen=True, eq=False)
class Gmm4:
    """4D Gaussian mixture with packed lower-triangular covariances."""

    weights: np.ndarray
    means: np.ndarray
    covariances_packed: np.ndarray
    _covs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = _frozen(self.weights).reshape(-1)
        mu = _frozen(self.means)
        cp = _frozen(self.covariances_packed)
        M = w.shape[0]
        if M < 1:
            raise InvalidModelError("model needs at least one component")
        if mu.shape != (M, D) or cp.shape != (M, PACKED):
            raise InvalidModelError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, covs {cp.shape}")
        if not (np.isfinite(w).all() and np.isfinite(mu).all() and np.isfinite(cp).all()):
            raise InvalidModelError("non-finite model parameters")
        if (w <= 0).any():
            raise InvalidModelError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidModelError(f"weights sum to {w.sum()!r}, not 1")
        covs = unpack_covariances(cp)
        try:
            batched_cholesky(covs)
        except NotPositiveDefiniteError as e:
            raise NotPositiveDefiniteError(e.index, f"covariance {e.index} is not SPD") from None
        covs.flags.writeable = False
        for name, val in (("weights", w), ("means", mu), ("covariances_packed", cp), ("_covs", covs)):
            object.__setattr__(self, name, val)

    @classmethod
    def from_full(cls, weights, means, covariances) -> "Gmm4":
        return cls(weights, means, pack_covariances(covariances))

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def covariances(self) -> np.ndarray:
        """Unpacked ``(M, 4, 4)`` covariances."""
        return self._covs

    def __eq__(self, other) -> bool:
        if not isinstance(other, Gmm4):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights)
                and np.array_equal(self.means, other.means)
                and np.array_equal(self.covariances_packed, other.covariances_packed))


def memory_footprint(model: Gmm4) -> int:
    """Bytes at 4-byte floats: one weight, four mean and ten covariance values."""
    return BYTES_PER_FLOAT * model.n_components * (1 + PACKED + D)


@dataclass(frozen=True, eq=False)
class CholeskyCache:
    factors: np.ndarray      # L_b, Sigma_b = L_b L_b^T
    precisions: np.ndarray   # P_b = L_b^{-1}
    log_det_terms: np.ndarray  # sum_j ln diag(P_b)_j = -1/2 ln|Sigma_b|


def cholesky_cache(model: Gmm4) -> CholeskyCache:
    L = batched_cholesky(model.covariances)
    P = batched_tri_inverse(L)
    logdet = np.log(np.diagonal(P, axis1=1, axis2=2)).sum(axis=1)
    return CholeskyCache(_frozen(L), _frozen(P), _frozen(logdet))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if (np.abs(R.T @ R - np.eye(3)).max() > 1e-10
                or abs(np.linalg.det(R) - 1.0) > 1e-10):
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T, orthonormalize: bool = False) -> "RigidTransform":
        T = np.asarray(T, dtype=np.float64)
        R = T[:3, :3]
        if orthonormalize:
            R = lie.orthonormalize(R)
        return cls(R, T[:3, 3])

    @classmethod
    def from_quaternion(cls, quat_wxyz, translation) -> "RigidTransform":
        R = Rotation.from_quat(np.asarray(quat_wxyz, dtype=np.float64), scalar_first=True)
        return cls(lie.orthonormalize(R.as_matrix()), translation)

    @classmethod
    def exp(cls, xi) -> "RigidTransform":
        R, t = lie.se3_exp(xi)
        return cls(lie.orthonormalize(R), t)

    def log(self) -> np.ndarray:
        return lie.se3_log(self.rotation, self.translation)

    def quaternion(self) -> np.ndarray:
        q = Rotation.from_matrix(self.rotation).as_quat(scalar_first=True)
        return q if q[0] >= 0 else -q

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        R = self.rotation @ other.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-12:
            R = lie.orthonormalize(R)
        return RigidTransform(R, self.rotation @ other.translation + self.translation)

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.rotation.T + self.translation

    def rotation_angle(self) -> float:
        return float(np.linalg.norm(lie.so3_log(self.rotation)))


def compose(*transforms: RigidTransform) -> RigidTransform:
    """``compose(A, B)`` applies ``B`` first, then ``A``."""
    out = transforms[0]
    for T in transforms[1:]:
        out = out @ T
    return out


def transform_model(model: Gmm4, T: RigidTransform) -> Gmm4:
    """Rigidly move a mixture; the intensity dimension is left untouched."""
    A = np.eye(D)
    A[:3, :3] = T.rotation
    means = model.means.copy()
    means[:, :3] = T.apply(means[:, :3])
    covs = A @ model.covariances @ A.T
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    return Gmm4.from_full(model.weights, means, covs)


# -- serialization ----------------------------------------------------------

def _renormalized(w: np.ndarray) -> np.ndarray:
    s = w.sum()
    if abs(s - 1.0) > 1e-6:
        raise InvalidModelError(f"stored weights sum to {s!r}")
    if abs(s - 1.0) > 1e-9:
        w = w / s
    return w


def save_gmm(model: Gmm4, path, format: str = "binary") -> None:
    path = Path(path)
    if format == "json":
        doc = {
            "weights": model.weights.astype(np.float32).tolist(),
            "means": model.means.astype(np.float32).tolist(),
            "covariances_packed": model.covariances_packed.astype(np.float32).tolist(),
        }
        path.write_text(json.dumps(doc, indent=1))
        return
    if format != "binary":
        raise ValueError(f"unknown format {format!r}")
    M = model.n_components
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", M))
        fh.write(model.weights.astype("<f4").tobytes())
        fh.write(model.means.astype("<f4").tobytes())
        fh.write(model.covariances_packed.astype("<f4").tobytes())


def _load_json(raw: bytes) -> Gmm4:
    try:
        doc = json.loads(raw)
        w = np.asarray(doc["weights"], dtype=np.float32).astype(np.float64)
        mu = np.asarray(doc["means"], dtype=np.float32).astype(np.float64)
        cp = np.asarray(doc["covariances_packed"], dtype=np.float32).astype(np.float64)
    except (ValueError, KeyError, TypeError) as e:
        raise GmmFormatError(f"malformed JSON model: {e}") from None
    return Gmm4(_renormalized(w), mu.reshape(-1, D), cp.reshape(-1, PACKED))


def load_gmm(path) -> Gmm4:
    """Read a binary or JSON model file (detected from the leading bytes)."""
    raw = Path(path).read_bytes()
    if raw[:1] == b"{":
        return _load_json(raw)
    if raw[:8] != MAGIC:
        raise GmmFormatError(f"{path}: bad magic {raw[:8]!r}")
    if len(raw) < 12:
        raise GmmTruncatedError(f"{path}: missing component count")
    (M,) = struct.unpack("<I", raw[8:12])
    if M < 1:
        raise GmmFormatError(f"{path}: zero components")
    sizes = {"weights": M, "means": M * D, "covariances": M * PACKED}
    arrays = {}
    off = 12
    for name, n in sizes.items():
        end = off + 4 * n
        if len(raw) < end:
            raise GmmTruncatedError(f"{path}: truncated in {name}")
        arrays[name] = np.frombuffer(raw[off:end], dtype="<f4").astype(np.float64)
        off = end
    if len(raw) != off:
        raise GmmFormatError(f"{path}: {len(raw) - off} trailing bytes")
    return Gmm4(_renormalized(arrays["weights"]),
                arrays["means"].reshape(M, D),
                arrays["covariances"].reshape(M, PACKED))
