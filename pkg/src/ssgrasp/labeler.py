"""Geometric dense grasp labels and the grasp success oracle.

Gripper model used by both the labeler and the oracle, in the gripper frame
(x = baseline b, y = a x b, z = approach a, origin at the pose translation):

* contacts sit at ``(+-w/2, 0, d0)``; the closing tube is the set of points
  within ``contact_radius`` of the line ``y = 0, z = d0`` and with
  ``|x| <= w/2 + finger_offset``;
* the outermost tube points along x are the contacts the jaws close on; their
  normals must lie inside the friction cone around -b (left) and +b (right);
* the body (two fingers offset outward by ``finger_offset``, the palm at depth
  ``d0 - finger_len``, the wrist back to the base, and the five gripper
  keypoints) must stay at least ``clearance`` away from every cloud point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import MissingNormals
from .grasp_core import GraspPose, GripperSpec, grasp_poses_batch, width_to_onehot
from .shapes import UnitCanonicalCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelParams:
    friction_deg: float = 10.0
    contact_radius: float = 0.004
    clearance: float = 0.002
    finger_offset: float = 0.004
    n_approach: int = 16
    max_partners: int = 8

    @property
    def cos_friction(self) -> float:
        return math.cos(math.radians(self.friction_deg))


@dataclass
class DenseGraspLabel:
    gs: np.ndarray
    baseline: np.ndarray
    approach: np.ndarray
    width: np.ndarray
    clearance: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.gs)

    @property
    def positive(self) -> np.ndarray:
        return np.nonzero(self.gs)[0]

    def as_array(self) -> np.ndarray:
        """``(N, 8)`` rows of ``gs, b, a, width``."""
        return np.concatenate(
            [self.gs[:, None].astype(float), self.baseline, self.approach, self.width[:, None]],
            axis=1,
        )

    @classmethod
    def from_array(cls, arr) -> "DenseGraspLabel":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[:, 0] > 0.5, arr[:, 1:4].copy(), arr[:, 4:7].copy(), arr[:, 7].copy())

    def width_onehot(self, spec: GripperSpec) -> np.ndarray:
        return width_to_onehot(np.clip(self.width, 0, spec.w_max), spec)

    def take(self, idx) -> "DenseGraspLabel":
        c = None if self.clearance is None else self.clearance[idx]
        return DenseGraspLabel(self.gs[idx], self.baseline[idx], self.approach[idx],
                               self.width[idx], c)


@dataclass
class CanonicalObjectSample:
    category: str
    cloud: UnitCanonicalCloud
    scale: float
    labels: DenseGraspLabel
    shape_params: dict = field(default_factory=dict)
    sample_id: int = 0
    shape_id: int = -1

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.cloud):
            raise ValueError("labels length must match cloud point count")

    def grasp_poses(self, spec: GripperSpec):
        """Metric object-frame poses ``(t, R, width)`` of the positive labels."""
        idx = self.labels.positive
        t, R = grasp_poses_batch(self.cloud.points[idx] * self.scale, self.labels.approach[idx],
                                 self.labels.baseline[idx], self.labels.width[idx], spec)
        return t, R, self.labels.width[idx]


def _require_normals(cloud):
    nrm = getattr(cloud, "normals", None)
    if nrm is None or np.shape(nrm) != np.shape(cloud.points):
        raise MissingNormals("cloud has no per-point normals")
    return np.asarray(nrm, dtype=np.float64)


def evaluate_grasp_poses(t, R, width, points, normals, spec: GripperSpec,
                         params: LabelParams = LabelParams()):
    """Oracle verdicts for many poses at once: ``(ok, clearance)``."""
    return kernels.evaluate_grasps(
        points, normals, t, R, width, spec.d0, spec.finger_len, params.contact_radius,
        params.clearance, params.finger_offset, params.cos_friction,
    )


def check_grasp_success(pose: GraspPose, cloud, scale: float = 1.0,
                        spec: GripperSpec = GripperSpec(),
                        params: LabelParams = LabelParams()) -> bool:
    """True iff the pose closes on friction-valid contacts without collision.

    ``pose`` and ``cloud.points * scale`` must be in the same metric frame.
    """
    nrm = _require_normals(cloud)
    if not 0 < pose.width <= spec.w_max * (1 + 1e-12):
        return False
    ok, _ = evaluate_grasp_poses(pose.t[None], pose.R[None], np.array([pose.width]),
                                 np.asarray(cloud.points) * scale, nrm, spec, params)
    return bool(ok[0])


def label_dense_grasps(cloud, scale: float, spec: GripperSpec = GripperSpec(),
                       params: LabelParams = LabelParams(), verify: bool = True
                       ) -> DenseGraspLabel:
    nrm = _require_normals(cloud)
    if not scale > 0:
        raise ValueError("scale must be > 0")
    pts = np.asarray(cloud.points, dtype=np.float64) * scale
    gs, b, a, w, clr = kernels.label_points(
        pts, nrm, spec.w_max, spec.d0, spec.finger_len, params.contact_radius,
        params.clearance, params.finger_offset, params.cos_friction,
        params.n_approach, params.max_partners,
    )
    labels = DenseGraspLabel(gs, b, a, w, clr)
    if verify and gs.any():
        idx = np.nonzero(gs)[0]
        t, R = grasp_poses_batch(pts[idx], a[idx], b[idx], w[idx], spec)
        ok, _ = evaluate_grasp_poses(t, R, w[idx], pts, nrm, spec, params)
        bad = idx[~ok]
        if len(bad):
            log.debug("dropping %d labels that failed re-verification", len(bad))
            labels.gs[bad] = False
            labels.baseline[bad] = 0
            labels.approach[bad] = 0
            labels.width[bad] = 0
    return labels


def interpolate_labels(query_points, labeled_points, theta_nn: float):
    """Index of the nearest labeled point for each query, or -1 when farther than ``theta_nn``."""
    if not theta_nn > 0:
        raise ValueError("theta_nn must be > 0")
    idx, d2 = kernels.nearest(query_points, labeled_points)
    return np.where(np.sqrt(d2) < theta_nn, idx, -1)
