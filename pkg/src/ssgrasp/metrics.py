"""Evaluation protocol: box IoU and pose AP, reconstruction chamfer, grasp coverage/success."""

from __future__ import annotations

import csv
import io as _io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EmptyCloud
from .grasp_core import GripperSpec
from .shapes import SYMMETRIC_CATEGORIES

IOU_THRESHOLDS = (0.25, 0.50)
POSE_THRESHOLDS = ((5.0, 5.0), (5.0, 10.0), (10.0, 5.0), (10.0, 10.0))
COVERAGE_LEVELS = (10, 20, 30, 40, 50)


def pose_key(deg, cm):
    return f"{deg:g}deg{cm:g}cm"


@dataclass
class OrientedBox:
    center: np.ndarray
    rotation: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.extents = np.asarray(self.extents, dtype=np.float64)
        if np.any(self.extents <= 0):
            raise ValueError("box extents must be > 0")

    @classmethod
    def from_pose(cls, R, t, scale, unit_extents):
        return cls(t, R, scale * np.asarray(unit_extents, dtype=np.float64))

    def corners(self):
        s = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], float)
        return self.center + (0.5 * s * self.extents) @ self.rotation.T

    def contains(self, pts):
        local = (np.asarray(pts) - self.center) @ self.rotation
        return np.all(np.abs(local) <= 0.5 * self.extents, axis=-1)

    @property
    def volume(self):
        return float(np.prod(self.extents))


def boxes_disjoint(b1: OrientedBox, b2: OrientedBox) -> bool:
    """Separating-axis test over the 15 candidate axes of two boxes."""
    axes = [b1.rotation[:, i] for i in range(3)] + [b2.rotation[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(b1.rotation[:, i], b2.rotation[:, j])
            n = np.linalg.norm(c)
            if n > 1e-12:
                axes.append(c / n)
    d = b2.center - b1.center
    for ax in axes:
        r1 = 0.5 * np.sum(b1.extents * np.abs(b1.rotation.T @ ax))
        r2 = 0.5 * np.sum(b2.extents * np.abs(b2.rotation.T @ ax))
        if abs(d @ ax) > r1 + r2:
            return True
    return False


def _inside_fraction(b: OrientedBox, other: OrientedBox, resolution):
    """Fraction of a cell-centered grid over ``b`` that lies inside ``other``."""
    u = (np.arange(resolution) + 0.5) / resolution - 0.5
    X, Y, Z = np.meshgrid(u * b.extents[0], u * b.extents[1], u * b.extents[2], indexing="ij")
    local = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    return np.count_nonzero(other.contains(b.center + local @ b.rotation.T)) / len(local)


def iou_3d(b1: OrientedBox, b2: OrientedBox, resolution: int = 64) -> float:
    """IoU with the intersection estimated on ``resolution^3`` grids inside each box.

    Box volumes are exact; the intersection volume is the mean of the two
    grid estimates, so the result is symmetric in its arguments. The error
    shrinks as O(1 / resolution) per axis. Boxes separated by an axis return
    exactly 0.
    """
    if resolution < 32:
        raise ValueError("resolution must be >= 32")
    if boxes_disjoint(b1, b2):
        return 0.0
    v1, v2 = b1.volume, b2.volume
    inter = 0.5 * (_inside_fraction(b1, b2, resolution) * v1
                   + _inside_fraction(b2, b1, resolution) * v2)
    return float(inter / (v1 + v2 - inter))


def _angle(cos_v, sin_v):
    return math.degrees(math.atan2(sin_v, cos_v))


def rotation_angle_deg(R1, R2) -> float:
    """Geodesic angle between two rotations (atan2 form, accurate near 0 and 180)."""
    M = np.asarray(R1).T @ np.asarray(R2)
    c = (np.trace(M) - 1.0) / 2.0
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return _angle(c, s)


def pose_error(R_pred, t_pred, R_gt, t_gt, category=None):
    """``(degrees, centimeters)``; axially symmetric categories ignore spin about +y.

    For the symmetric classes the minimum over rotations about the canonical
    up axis equals the angle between the two predicted up axes, which is used
    directly.
    """
    if category in SYMMETRIC_CATEGORIES:
        u1, u2 = np.asarray(R_pred)[:, 1], np.asarray(R_gt)[:, 1]
        deg = _angle(float(u1 @ u2), float(np.linalg.norm(np.cross(u1, u2))))
    else:
        deg = rotation_angle_deg(R_pred, R_gt)
    cm = 100.0 * float(np.linalg.norm(np.asarray(t_pred, float) - np.asarray(t_gt, float)))
    return deg, cm


@dataclass
class Detection:
    """One predicted or ground-truth object instance in a frame."""

    frame: int
    class_id: int
    R: np.ndarray
    t: np.ndarray
    scale: float
    extents: np.ndarray
    confidence: float = 1.0
    category: str = None

    @property
    def box(self):
        return OrientedBox.from_pose(self.R, self.t, self.scale, self.extents)


def average_precision(tp, conf, n_gt):
    """All-point interpolated AP in [0, 1] from TP flags and confidences."""
    if n_gt == 0:
        return float("nan")
    order = np.argsort(-np.asarray(conf, float), kind="stable")
    tp = np.asarray(tp, dtype=float)[order]
    ctp, cfp = np.cumsum(tp), np.cumsum(1 - tp)
    recall = np.concatenate([[0.0], ctp / n_gt, [1.0]])
    prec = np.concatenate([[1.0], ctp / np.maximum(ctp + cfp, 1e-12), [0.0]])
    if len(tp) == 0:
        return 0.0
    prec = np.maximum.accumulate(prec[::-1])[::-1]
    steps = np.nonzero(recall[1:] != recall[:-1])[0]
    return float(np.sum((recall[steps + 1] - recall[steps]) * prec[steps + 1]))


def match_detections(preds, gts, key="center"):
    """Greedy confidence-ordered matching within (frame, class).

    Each prediction takes the closest still-unmatched GT (center distance or,
    with ``key='iou'``, highest positive IoU). Returns a GT index or -1 per
    prediction, in the order of ``preds``.
    """
    match = np.full(len(preds), -1, dtype=np.int64)
    used = set()
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    for i in order:
        p = preds[i]
        best, best_j = None, -1
        for j, g in enumerate(gts):
            if j in used or g.frame != p.frame or g.class_id != p.class_id:
                continue
            if key == "iou":
                v = iou_3d(p.box, g.box)
                if v <= 0:
                    continue
                score = -v
            else:
                score = float(np.linalg.norm(np.asarray(p.t) - np.asarray(g.t)))
            if best is None or score < best:
                best, best_j = score, j
        if best_j >= 0:
            used.add(best_j)
            match[i] = best_j
    return match


def _per_class_ap(preds, gts, tp):
    classes = sorted({g.class_id for g in gts})
    aps = []
    for c in classes:
        idx = [i for i, p in enumerate(preds) if p.class_id == c]
        n_gt = sum(1 for g in gts if g.class_id == c)
        aps.append(average_precision([tp[i] for i in idx], [preds[i].confidence for i in idx],
                                     n_gt))
    return 100.0 * float(np.mean(aps)) if aps else 0.0


def detection_pose_ap(preds, gts, thresholds=POSE_THRESHOLDS):
    """Pose AP (percent, mean over classes) for each ``(degrees, cm)`` threshold."""
    match = match_detections(preds, gts)
    errs = [pose_error(p.R, p.t, gts[m].R, gts[m].t, gts[m].category) if m >= 0 else None
            for p, m in zip(preds, match)]
    out = {}
    for deg, cm in thresholds:
        tp = [e is not None and e[0] <= deg and e[1] <= cm for e in errs]
        out[pose_key(deg, cm)] = _per_class_ap(preds, gts, tp)
    return out


def detection_iou_ap(preds, gts, thresholds=IOU_THRESHOLDS, resolution=64):
    match = match_detections(preds, gts, key="iou")
    ious = [iou_3d(p.box, gts[m].box, resolution) if m >= 0 else 0.0
            for p, m in zip(preds, match)]
    return {f"iou{int(round(100 * th))}": _per_class_ap(preds, gts, [v >= th for v in ious])
            for th in thresholds}


def chamfer_eval(P, Q) -> float:
    """Mean Euclidean nearest distance, averaged over both directions."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if len(P) == 0 or len(Q) == 0:
        raise EmptyCloud("chamfer of an empty cloud")
    _, d1 = kernels.nearest(P, Q)
    _, d2 = kernels.nearest(Q, P)
    return float(0.5 * (np.sqrt(d1).mean() + np.sqrt(d2).mean()))


def gripper_base(t, R, spec: GripperSpec):
    """Base keypoint ``t - d0 * a`` of each grasp."""
    return np.asarray(t, float) - spec.d0 * np.asarray(R, float)[..., :, 2]


@dataclass
class CoverageCurve:
    confidence: np.ndarray
    coverage: np.ndarray
    success: np.ndarray
    table: dict = field(default_factory=dict)

    def to_dict(self):
        return {"table": {str(k): v for k, v in self.table.items()},
                "curve": [{"confidence": float(c), "coverage": float(a), "success": float(b)}
                          for c, a, b in zip(self.confidence, self.coverage, self.success)]}


def coverage_success(pred_t, pred_R, pred_conf, gt_t, gt_R, success, radius=0.02,
                     spec: GripperSpec = GripperSpec(), levels=COVERAGE_LEVELS):
    """Success rate (percent) at the first confidence cut reaching each coverage level.

    ``success`` is a boolean array of oracle verdicts for the predictions.
    Levels that are never reached are left out of the table.
    """
    if not radius > 0:
        raise ValueError("radius must be > 0")
    pred_conf = np.asarray(pred_conf, float)
    n_gt = len(gt_t)
    if len(pred_conf) == 0 or n_gt == 0:
        return CoverageCurve(np.zeros(0), np.zeros(0), np.zeros(0), {})
    order = np.argsort(-pred_conf, kind="stable")
    pb = gripper_base(pred_t, pred_R, spec)[order]
    gb = gripper_base(gt_t, gt_R, spec)
    ok = np.asarray(success, bool)[order]
    d2 = np.sum((pb[:, None, :] - gb[None, :, :]) ** 2, axis=-1)
    hit = d2 <= radius * radius
    # first kept prediction (in confidence order) that covers each GT grasp
    first = np.where(hit.any(axis=0), np.argmax(hit, axis=0), len(pb))
    conf = pred_conf[order]
    # evaluate at the end of each run of equal confidence
    ends = np.nonzero(np.r_[conf[1:] != conf[:-1], True])[0]
    covered = np.array([np.count_nonzero(first <= e) for e in ends])
    coverage = 100.0 * covered / n_gt
    succ = 100.0 * np.cumsum(ok)[ends] / (ends + 1)
    table = {}
    for lv in levels:
        k = np.nonzero(coverage >= lv)[0]
        if len(k):
            table[lv] = float(succ[k[0]])
    return CoverageCurve(conf[ends], coverage, succ, table)


@dataclass
class EvalReport:
    iou_ap: dict = field(default_factory=dict)
    pose_ap: dict = field(default_factory=dict)
    chamfer: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)

    def to_dict(self):
        return {"iou_ap": self.iou_ap, "pose_ap": self.pose_ap, "chamfer": self.chamfer,
                "coverage_success": {str(k): v for k, v in self.coverage.items()}}

    def csv_columns(self):
        cols = [f"iou{int(100 * t)}" for t in IOU_THRESHOLDS]
        cols += [pose_key(d, c) for d, c in POSE_THRESHOLDS]
        cols += [f"success@{lv}" for lv in COVERAGE_LEVELS]
        return cols

    def to_csv(self):
        row = [self.iou_ap.get(c) for c in self.csv_columns()[:2]]
        row += [self.pose_ap.get(pose_key(d, c)) for d, c in POSE_THRESHOLDS]
        row += [self.coverage.get(lv) for lv in COVERAGE_LEVELS]
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_columns())
        w.writerow(["" if v is None else f"{v:.4f}" for v in row])
        w.writerow([])
        w.writerow(["category", "chamfer_m"])
        for k in sorted(self.chamfer):
            w.writerow([k, f"{self.chamfer[k]:.6f}"])
        return buf.getvalue()
