"""SO(3)/SE(3) exponential and logarithm maps.

Tangent vectors are ordered ``(omega, v)``: rotation first, translation last.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation


def hat(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(w, dtype=np.float64)).as_matrix()


def so3_log(R) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def _left_jacobian_coeffs(theta: float) -> tuple[float, float]:
    if theta < 1e-5:
        t2 = theta * theta
        return 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    t2 = theta * theta
    return (1.0 - np.cos(theta)) / t2, (theta - np.sin(theta)) / (t2 * theta)


def se3_exp(xi) -> tuple[np.ndarray, np.ndarray]:
    xi = np.asarray(xi, dtype=np.float64)
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    W = hat(w)
    a, b = _left_jacobian_coeffs(theta)
    V = np.eye(3) + a * W + b * (W @ W)
    return so3_exp(w), V @ v


def se3_log(R, t) -> np.ndarray:
    w = so3_log(R)
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < 1e-5:
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        c = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / (theta * theta)
    Vinv = np.eye(3) - 0.5 * W + c * (W @ W)
    return np.concatenate([w, Vinv @ np.asarray(t, dtype=np.float64)])


def orthonormalize(R) -> np.ndarray:
    """Closest rotation in Frobenius norm."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt
