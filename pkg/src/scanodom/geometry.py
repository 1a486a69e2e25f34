"""Rigid-body geometry: SO(3) exp/log maps and SE(3) pose algebra.

Rotations are 3x3 float64 matrices; axis-angle vectors are length-3 arrays
whose direction is the rotation axis and whose norm is the angle in radians.
`exp_so3` and `log_so3` also accept a leading batch dimension. Everything is
computed in 64-bit floats: pose chains over thousands of frames accumulate
error otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this angle (rad) the Rodrigues coefficients switch to their
# second-order Taylor expansions.
SMALL_ANGLE = 1e-8

# Width of the band around pi where the axis is recovered from the diagonal
# of R + I; the skew part of R vanishes there and loses the axis direction.
_NEAR_PI = 1e-3


def skew(w) -> np.ndarray:
    """Cross-product matrix [w]x of one or many 3-vectors."""
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def exp_so3(w) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (Rodrigues' formula).

    Accepts shape (3,) or (..., 3) and returns (3, 3) or (..., 3, 3).
    """
    w = np.asarray(w, dtype=np.float64)
    theta2 = np.einsum("...i,...i->...", w, w)
    theta = np.sqrt(theta2)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / (safe * safe))
    wx = skew(w)
    eye = np.zeros(wx.shape)
    eye[..., 0, 0] = eye[..., 1, 1] = eye[..., 2, 2] = 1.0
    return eye + a[..., None, None] * wx + b[..., None, None] * (wx @ wx)


def log_so3(R) -> np.ndarray:
    """Principal axis-angle vector (norm in [0, pi]) of a rotation matrix.

    Accepts shape (3, 3) or (..., 3, 3). The angle is obtained from
    atan2(|skew part|, trace), which stays accurate over the whole range;
    near pi the axis is rebuilt from the diagonal of R + I.
    """
    R = np.asarray(R, dtype=np.float64)
    single = R.ndim == 2
    Rb = R.reshape((-1, 3, 3))

    vee = 0.5 * np.stack(
        [
            Rb[:, 2, 1] - Rb[:, 1, 2],
            Rb[:, 0, 2] - Rb[:, 2, 0],
            Rb[:, 1, 0] - Rb[:, 0, 1],
        ],
        axis=-1,
    )
    s = np.linalg.norm(vee, axis=-1)  # sin(theta), >= 0
    c = 0.5 * (Rb[:, 0, 0] + Rb[:, 1, 1] + Rb[:, 2, 2] - 1.0)  # cos(theta)
    theta = np.arctan2(s, c)

    out = np.empty_like(vee)
    near_pi = (np.pi - theta) < _NEAR_PI
    tiny = (theta < SMALL_ANGLE) & ~near_pi
    mid = ~near_pi & ~tiny

    out[tiny] = vee[tiny] * (1.0 + theta[tiny] ** 2 / 6.0)[:, None]
    if np.any(mid):
        out[mid] = vee[mid] * (theta[mid] / s[mid])[:, None]
    if np.any(near_pi):
        idx = np.flatnonzero(near_pi)
        Rp = Rb[idx]
        cp = c[idx]
        # (R + R^T)/2 = cos(t) I + (1 - cos(t)) k k^T, so the outer product
        # of the axis with itself is recoverable whenever cos(t) is far from 1.
        kkt = (0.5 * (Rp + np.transpose(Rp, (0, 2, 1)))) - cp[:, None, None] * np.eye(3)
        kkt /= (1.0 - cp)[:, None, None]
        diag = np.stack([kkt[:, 0, 0], kkt[:, 1, 1], kkt[:, 2, 2]], axis=-1)
        pivot = np.argmax(diag, axis=-1)
        rows = kkt[np.arange(len(idx)), pivot]  # k_pivot * k
        kp = np.sqrt(np.maximum(diag[np.arange(len(idx)), pivot], 0.0))
        axis = rows / np.where(kp > 0.0, kp, 1.0)[:, None]
        norm = np.linalg.norm(axis, axis=-1)
        axis /= np.where(norm > 0.0, norm, 1.0)[:, None]
        # the diagonal only determines the axis up to sign; take it from the
        # skew part, which keeps the sign of sin(theta)
        sign = np.where(np.einsum("ij,ij->i", axis, vee[idx]) < 0.0, -1.0, 1.0)
        out[idx] = axis * (sign * theta[idx])[:, None]

    return out[0] if single else out.reshape(R.shape[:-2] + (3,))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: p_out = rotation @ p_in + translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if tra.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {tra.shape}")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3].copy(), m[:3, 3].copy())


def compose(a: Pose, b: Pose) -> Pose:
    """Group product a*b: apply b first, then a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(a: Pose) -> Pose:
    """Inverse transform (R^T, -R^T t)."""
    rt = a.rotation.T
    return Pose(rt, -(rt @ a.translation))


def transform_point(a: Pose, p) -> np.ndarray:
    """Apply the transform to a single 3-vector."""
    p = np.asarray(p, dtype=np.float64)
    return a.rotation @ p + a.translation


def transform_points(a: Pose, pts) -> np.ndarray:
    """Apply the transform to an (N, 3) array of points."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ a.rotation.T + a.translation


def rotation_angle(R) -> np.ndarray:
    """Geodesic rotation angle(s) in [0, pi] of one or many rotation matrices."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2]
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))
