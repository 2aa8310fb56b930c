"""Parallel-jaw grasp parametrization.

Per-point grasp parameters (contact point ``p``, baseline ``b``, approach
``a``, opening ``width``) map to a gripper pose with

    t = p + width/2 * b - d0 * a,        R = [b | a x b | a]

Keypoints (base, finger roots, fingertips) give a pose distance that can be
made symmetric under the 180 degree flip of a parallel-jaw gripper.

Every function has a scalar form operating on 3-vectors and, where the hot
paths need it, a ``*_batch`` form operating on ``(..., 3)`` arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDirections, InvalidDirections, NegativeWidth

EPS_DEGENERATE = 1e-8

KEYPOINT_NAMES = ("base", "left_root", "right_root", "left_tip", "right_tip")
# index permutation that swaps the two fingers
SYMMETRIC_ORDER = np.array([0, 2, 1, 4, 3])


@dataclass(frozen=True)
class GripperSpec:
    w_max: float = 0.08
    d0: float = 0.10
    finger_len: float = 0.05
    n_width_bins: int = 10

    def __post_init__(self):
        if not self.w_max > 0:
            raise ValueError(f"w_max must be > 0, got {self.w_max}")
        if not self.d0 >= 0:
            raise ValueError(f"d0 must be >= 0, got {self.d0}")
        if not self.finger_len > 0:
            raise ValueError(f"finger_len must be > 0, got {self.finger_len}")
        if int(self.n_width_bins) != self.n_width_bins or self.n_width_bins < 2:
            raise ValueError(f"n_width_bins must be an integer >= 2, got {self.n_width_bins}")

    @property
    def bin_size(self) -> float:
        return self.w_max / self.n_width_bins

    @property
    def n_channels(self) -> int:
        """Per-point channel count of a dense grasp cloud: xyz, gs, z1, z2, width bins."""
        return 3 + 1 + 3 + 3 + self.n_width_bins

    def keypoint_offsets(self, width):
        """Coefficients (along b, along a) of each keypoint relative to ``t``.

        Returns an array of shape ``width.shape + (5, 2)``.
        """
        w = np.asarray(width, dtype=float)
        half = 0.5 * w
        zero = np.zeros_like(w)
        fl = np.full_like(w, self.finger_len)
        along_b = np.stack([zero, -half, half, -half, half], axis=-1)
        along_a = np.stack([np.full_like(w, -self.d0), zero, zero, fl, fl], axis=-1)
        return np.stack([along_b, along_a], axis=-1)


@dataclass(frozen=True)
class GraspPose:
    t: np.ndarray
    R: np.ndarray
    width: float

    @property
    def baseline(self) -> np.ndarray:
        return self.R[:, 0]

    @property
    def approach(self) -> np.ndarray:
        return self.R[:, 2]

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "GraspPose":
        """Pose after applying the rigid motion ``x -> R x + t``."""
        return GraspPose(R @ self.t + t, R @ self.R, self.width)

    def flipped(self) -> "GraspPose":
        """Same grasp with the fingers swapped (180 deg about the approach axis)."""
        return GraspPose(self.t.copy(), self.R @ np.diag([-1.0, -1.0, 1.0]), self.width)


@dataclass(frozen=True)
class KeypointSet:
    base: np.ndarray
    left_root: np.ndarray
    right_root: np.ndarray
    left_tip: np.ndarray
    right_tip: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([getattr(self, k) for k in KEYPOINT_NAMES])

    @classmethod
    def from_array(cls, arr) -> "KeypointSet":
        arr = np.asarray(arr, dtype=float)
        return cls(*(arr[i].copy() for i in range(5)))


def orthonormalize(z1, z2, eps: float = EPS_DEGENERATE):
    """Gram-Schmidt: ``b`` along ``z1``, ``a`` the part of ``z2`` orthogonal to ``b``.

    Raises DegenerateDirections if ``z1`` or the projected ``z2`` is shorter
    than ``eps``.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    n1 = np.linalg.norm(z1)
    if not n1 > eps:
        raise DegenerateDirections(f"|z1| = {n1:.3g} <= {eps}")
    b = z1 / n1
    v = z2 - np.dot(b, z2) * b
    nv = np.linalg.norm(v)
    if not nv > eps:
        raise DegenerateDirections(f"|z2 - <b,z2> b| = {nv:.3g} <= {eps}")
    return b, v / nv


def orthonormalize_batch(z1, z2, eps: float = EPS_DEGENERATE):
    """Vectorized orthonormalize over leading dims.

    Returns ``(b, a, valid)``; rows with ``valid == False`` hold zeros.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    n1 = np.linalg.norm(z1, axis=-1)
    ok1 = n1 > eps
    b = np.where(ok1[..., None], z1 / np.where(ok1, n1, 1.0)[..., None], 0.0)
    v = z2 - np.sum(b * z2, axis=-1, keepdims=True) * b
    nv = np.linalg.norm(v, axis=-1)
    valid = ok1 & (nv > eps)
    a = np.where(valid[..., None], v / np.where(valid, nv, 1.0)[..., None], 0.0)
    b = np.where(valid[..., None], b, 0.0)
    return b, a, valid


def orthonormalize_backward(z1, z2, b, a, grad_b, grad_a):
    """Chain rule through :func:`orthonormalize_batch` for valid rows."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    n1 = np.linalg.norm(z1, axis=-1, keepdims=True)
    bz2 = np.sum(b * z2, axis=-1, keepdims=True)
    v = z2 - bz2 * b
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    # a = v/|v|
    gv = (grad_a - np.sum(a * grad_a, axis=-1, keepdims=True) * a) / nv
    # v = z2 - (b.z2) b
    gvb = np.sum(gv * b, axis=-1, keepdims=True)
    gz2 = gv - gvb * b
    gb = grad_b - bz2 * gv - gvb * z2
    # b = z1/|z1|
    gz1 = (gb - np.sum(b * gb, axis=-1, keepdims=True) * b) / n1
    return gz1, gz2


def _check_orthonormal(a, b, tol=1e-6):
    if (
        abs(np.linalg.norm(a) - 1.0) > tol
        or abs(np.linalg.norm(b) - 1.0) > tol
        or abs(np.dot(a, b)) > tol
    ):
        raise InvalidDirections("approach/baseline must be orthonormal")


def rotation_from_directions(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack([b, np.cross(a, b), a], axis=-1)


def grasp_pose_from_params(p, a, b, width, spec: GripperSpec) -> GraspPose:
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_orthonormal(a, b)
    if width < 0 or width > spec.w_max * (1 + 1e-12):
        raise ValueError(f"width {width} outside [0, {spec.w_max}]")
    t = p + 0.5 * width * b - spec.d0 * a
    return GraspPose(t, rotation_from_directions(a, b), float(width))


def grasp_poses_batch(p, a, b, width, spec: GripperSpec):
    """Vectorized pose construction; returns ``(t, R)`` with shapes (...,3), (...,3,3)."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w = np.asarray(width, dtype=float)
    t = p + 0.5 * w[..., None] * b - spec.d0 * a
    return t, rotation_from_directions(a, b)


def keypoints_batch(t, R, width, spec: GripperSpec) -> np.ndarray:
    """Keypoints for poses given as arrays; shape ``(..., 5, 3)``."""
    t = np.asarray(t, dtype=float)
    R = np.asarray(R, dtype=float)
    coef = spec.keypoint_offsets(width)
    b = R[..., :, 0]
    a = R[..., :, 2]
    return (
        t[..., None, :]
        + coef[..., :, 0:1] * b[..., None, :]
        + coef[..., :, 1:2] * a[..., None, :]
    )


def gripper_keypoints(pose: GraspPose, spec: GripperSpec) -> KeypointSet:
    return KeypointSet.from_array(keypoints_batch(pose.t, pose.R, pose.width, spec))


def symmetric_keypoints(k):
    """Swap left/right fingers. Accepts a KeypointSet or a ``(..., 5, 3)`` array."""
    if isinstance(k, KeypointSet):
        return KeypointSet(k.base, k.right_root, k.left_root, k.right_tip, k.left_tip)
    return np.asarray(k)[..., SYMMETRIC_ORDER, :]


def width_to_bin(width, spec: GripperSpec):
    w = np.asarray(width, dtype=float)
    if np.any(w < 0):
        raise NegativeWidth(f"negative grasp width: {w[w < 0].min()}")
    if np.any(w > spec.w_max):
        warnings.warn("grasp width above w_max clamped to last bin", stacklevel=2)
    idx = np.floor(w / spec.bin_size).astype(np.int64)
    return np.clip(idx, 0, spec.n_width_bins - 1)


def width_to_onehot(width, spec: GripperSpec) -> np.ndarray:
    idx = width_to_bin(width, spec)
    return np.eye(spec.n_width_bins)[idx]


def onehot_to_width(onehot, spec: GripperSpec):
    """Center of the highest-scoring bin; ties go to the lower index."""
    idx = np.argmax(np.asarray(onehot), axis=-1)
    w = (idx + 0.5) * spec.bin_size
    return float(w) if np.ndim(w) == 0 else w
