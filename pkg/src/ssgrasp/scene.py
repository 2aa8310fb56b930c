"""Scene composition from a peak heatmap and per-pixel object descriptors.

Descriptor layout: ``[t (3) | rotation6d (6) | scale_raw (1) | embedding (E)]``.
The 6D rotation holds the first two rotation columns before
orthonormalization; the scale goes through ``positive_scale``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateDirections, DegenerateRotation
from .grasp_core import GraspPose, GripperSpec, grasp_poses_batch, orthonormalize
from .model import DenseGraspCloud, ModelParams, decode_raw_batch, heads

DESC_FIXED = 10


@dataclass
class Heatmap:
    """Confidence grid ``(H, W)`` with descriptors ``(H, W, D)`` and optional class ids."""

    confidence: np.ndarray
    descriptors: np.ndarray
    classes: np.ndarray = None

    def __post_init__(self):
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        if self.descriptors.shape[:2] != self.confidence.shape:
            raise ValueError("descriptor grid must match the confidence grid")
        if self.descriptors.shape[2] <= DESC_FIXED:
            raise ValueError("descriptor too short to hold an embedding")

    @property
    def embed_dim(self):
        return self.descriptors.shape[2] - DESC_FIXED


@dataclass
class DenseDescriptor:
    translation: np.ndarray
    rotation6d: np.ndarray
    scale: float
    embedding: np.ndarray

    @property
    def rotation(self):
        return rotation_from_6d(self.rotation6d)


@dataclass
class GraspSet:
    """Array-backed list of metric grasps."""

    t: np.ndarray
    R: np.ndarray
    width: np.ndarray
    confidence: np.ndarray

    def __len__(self):
        return len(self.width)

    def __getitem__(self, i) -> GraspPose:
        return GraspPose(self.t[i], self.R[i], float(self.width[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def matrices(self):
        M = np.zeros((len(self), 4, 4))
        M[:, :3, :3] = self.R
        M[:, :3, 3] = self.t
        M[:, 3, 3] = 1.0
        return M

    def to_json(self):
        return [{"pose": m.ravel().tolist(), "width": float(w), "confidence": float(c)}
                for m, w, c in zip(self.matrices(), self.width, self.confidence)]


@dataclass
class ScenePrediction:
    class_id: int
    confidence: float
    pixel: tuple
    R: np.ndarray
    t: np.ndarray
    scale: float
    embedding: np.ndarray
    decoded: DenseGraspCloud
    cloud: np.ndarray
    grasps: GraspSet = field(repr=False, default=None)

    @property
    def pose_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M


@dataclass(frozen=True)
class SceneThresholds:
    tau: float = 0.3
    window: int = 3
    gs_threshold: float = 0.5


# ------------------------------------------------------------------ peaks

def detect_peaks(heatmap, tau: float = 0.3, window: int = 3):
    """Local maxima above ``tau`` as ``(row, col, confidence)``, most confident first.

    A pixel survives when it is >= every neighbor in the window and strictly
    greater than neighbors that come before it in row-major order, so a flat
    plateau keeps only its first pixel.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must be in (0, 1)")
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    H = heatmap.confidence if isinstance(heatmap, Heatmap) else np.asarray(heatmap, float)
    rows, cols = kernels.local_peaks(H, window, tau)
    conf = H[rows, cols]
    order = np.lexsort((cols, rows, -conf))
    return [(int(rows[i]), int(cols[i]), float(conf[i])) for i in order]


# ------------------------------------------------------------------ descriptors

SCALE_KNEE = 1e-3


def positive_scale(x):
    """Scale from its raw descriptor value: identity above ``SCALE_KNEE``,
    an exponential tail below (continuous with matching slope at the knee).

    Unlike softplus this is exactly invertible in floating point over the
    range of real object scales.
    """
    if x >= SCALE_KNEE:
        return float(x)
    return SCALE_KNEE * math.exp(x / SCALE_KNEE - 1.0)


def inverse_positive_scale(y):
    if not y > 0:
        raise ValueError("scale must be > 0")
    if y >= SCALE_KNEE:
        return float(y)
    return SCALE_KNEE * (1.0 + math.log(y / SCALE_KNEE))


def rotation_from_6d(r6):
    r6 = np.asarray(r6, dtype=np.float64)
    try:
        c1, c2 = orthonormalize(r6[:3], r6[3:6])
    except DegenerateDirections as e:
        raise DegenerateRotation(str(e)) from None
    return np.stack([c1, c2, np.cross(c1, c2)], axis=1)


def pack_descriptor(t, R, scale, embedding):
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([np.asarray(t, dtype=np.float64), R[:, 0], R[:, 1],
                           [inverse_positive_scale(float(scale))], np.asarray(embedding, float)])


def unpack_descriptor(z, embed_dim=None) -> DenseDescriptor:
    z = np.asarray(z, dtype=np.float64)
    if len(z) <= DESC_FIXED or (embed_dim is not None and len(z) != DESC_FIXED + embed_dim):
        raise ValueError(f"descriptor length {len(z)} does not match the layout")
    rotation_from_6d(z[3:9])  # validates the 6D part
    return DenseDescriptor(z[:3].copy(), z[3:9].copy(), positive_scale(float(z[9])), z[10:].copy())


# ------------------------------------------------------------------ composition

def compose_object(cloud: DenseGraspCloud, R, t, scale, spec: GripperSpec = GripperSpec(),
                   gs_threshold: float = 0.5):
    """Metric camera-frame cloud and grasps of one decoded object.

    Widths are already metric, so only positions are multiplied by ``scale``.
    """
    if not scale > 0:
        raise ValueError("scale must be > 0")
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    obj = scale * cloud.positions
    cam = obj @ R.T + t
    idx = np.nonzero((cloud.gs > gs_threshold) & cloud.valid)[0]
    width = np.minimum(cloud.width[idx], spec.w_max)
    go, Ro = grasp_poses_batch(obj[idx], cloud.approach[idx], cloud.baseline[idx], width, spec)
    grasps = GraspSet(go @ R.T + t, R @ Ro, width, cloud.gs[idx].copy())
    return cam, grasps


def build_scene(heatmap: Heatmap, params: ModelParams, spec: GripperSpec = GripperSpec(),
                thresholds: SceneThresholds = SceneThresholds()):
    """Peaks -> descriptors -> one batched decode -> composed objects, by confidence."""
    peaks = detect_peaks(heatmap, thresholds.tau, thresholds.window)
    if not peaks:
        return []
    descs = [unpack_descriptor(heatmap.descriptors[r, c], params.config.embed_dim)
             for r, c, _ in peaks]
    raw = decode_raw_batch(np.stack([d.embedding for d in descs]),
                           np.array([d.scale for d in descs]), params)
    out = []
    for (r, c, conf), d, rw in zip(peaks, descs, raw):
        dec = heads(rw, spec)
        R = d.rotation
        cam, grasps = compose_object(dec, R, d.translation, d.scale, spec, thresholds.gs_threshold)
        cls = int(heatmap.classes[r, c]) if heatmap.classes is not None else -1
        out.append(ScenePrediction(cls, conf, (r, c), R, d.translation, d.scale, d.embedding,
                                   dec, cam, grasps))
    return out


# ------------------------------------------------------------------ synthetic scenes

def project(points, K):
    """Pinhole projection of camera-frame points to ``(u, v)`` pixels."""
    p = np.atleast_2d(points)
    uv = p[:, :2] / p[:, 2:3]
    return np.stack([K[0][0] * uv[:, 0] + K[0][2], K[1][1] * uv[:, 1] + K[1][2]], axis=1)


def synth_heatmap(objects, image_hw=(480, 640), K=None, stride=8, sigma=2.0, radius=None):
    """Heatmap with one Gaussian blob per object at its projected center.

    ``objects`` is a list of dicts with ``t``, ``R``, ``scale``, ``embedding``
    and optional ``confidence`` (peak amplitude) and ``class_id``. Descriptors
    are written to every pixel within ``radius`` (default ``2 sigma``) of the
    blob center; nearer objects win where discs overlap.
    """
    h, w = image_hw[0] // stride, image_hw[1] // stride
    if K is None:
        K = [[600.0, 0, image_hw[1] / 2], [0, 600.0, image_hw[0] / 2], [0, 0, 1]]
    radius = 2 * sigma if radius is None else radius
    E = len(objects[0]["embedding"]) if objects else 1
    conf = np.zeros((h, w))
    desc = np.zeros((h, w, DESC_FIXED + E))
    classes = np.full((h, w), -1, dtype=np.int64)
    owner_amp = np.zeros((h, w))
    rr, cc = np.mgrid[0:h, 0:w]
    centers = []
    for o in objects:
        u, v = project(np.asarray(o["t"], float)[None], K)[0] / stride
        col, row = int(round(u)), int(round(v))
        amp = float(o.get("confidence", 1.0))
        blob = amp * np.exp(-((rr - row) ** 2 + (cc - col) ** 2) / (2 * sigma ** 2))
        conf = np.maximum(conf, blob)
        disc = (rr - row) ** 2 + (cc - col) ** 2 <= radius ** 2
        write = disc & (blob >= owner_amp)
        owner_amp = np.where(write, blob, owner_amp)
        desc[write] = pack_descriptor(o["t"], o["R"], o["scale"], o["embedding"])
        classes[write] = int(o.get("class_id", -1))
        centers.append((row, col))
    return Heatmap(conf, desc, classes), centers
