"""Training losses with hand-derived gradients.

Predictions are handled in their raw decoder layout, one row per point::

    [x y z | gs_logit | z1 (3) | z2 (3) | width_logits (n_bins)]

and every loss returns its gradient with respect to that raw array, so the
model backward pass can consume it directly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import EmptyCloud
from .grasp_core import (
    GripperSpec,
    keypoints_batch,
    grasp_poses_batch,
    orthonormalize_backward,
    orthonormalize_batch,
    symmetric_keypoints,
    width_to_onehot,
)

BCE_EPS = 1e-7

POS = slice(0, 3)
GS = 3
Z1 = slice(4, 7)
Z2 = slice(7, 10)
WB = slice(10, None)


@dataclass(frozen=True)
class LossConfig:
    lambda_shape: float = 1.0
    lambda_grasp: float = 1.0
    lambda_gs: float = 1.0
    lambda_gw: float = 1.0
    lambda_6dof: float = 0.1
    theta_chamfer: float = 5e-4
    theta_nn: float = 0.01
    k: int = 512

    def __post_init__(self):
        for name in ("lambda_shape", "lambda_grasp", "lambda_gs", "lambda_gw", "lambda_6dof"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.theta_chamfer > 0 and self.theta_nn > 0):
            raise ValueError("thresholds must be > 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class LossReport:
    total: float
    chamfer: float
    gs: float = 0.0
    gw: float = 0.0
    sixdof: float = 0.0
    gate_open: bool = False
    pairs_gs_pred: int = 0
    pairs_gs_gt: int = 0
    pairs_pos: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class LossTarget:
    """Ground truth of one sample, preprocessed for the loss terms."""

    points: np.ndarray
    gs: np.ndarray
    scale: float
    pos_points: np.ndarray
    pos_onehot: np.ndarray
    pos_keypoints: np.ndarray
    pos_keypoints_sym: np.ndarray


def prepare_target(sample, spec: GripperSpec) -> LossTarget:
    if isinstance(sample, LossTarget):
        return sample
    pts = np.asarray(sample.cloud.points, dtype=np.float64)
    lab = sample.labels
    idx = lab.positive
    t, R = grasp_poses_batch(pts[idx] * sample.scale, lab.approach[idx], lab.baseline[idx],
                             lab.width[idx], spec)
    kp = keypoints_batch(t, R, lab.width[idx], spec)
    return LossTarget(
        points=pts,
        gs=lab.gs.astype(np.float64),
        scale=float(sample.scale),
        pos_points=pts[idx],
        pos_onehot=width_to_onehot(np.clip(lab.width[idx], 0, spec.w_max), spec),
        pos_keypoints=kp,
        pos_keypoints_sym=symmetric_keypoints(kp),
    )


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def bce(p, y):
    """Element-wise binary cross-entropy on probabilities clipped to [eps, 1-eps]."""
    pc = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    return -(y * np.log(pc) + (1 - y) * np.log(1 - pc))


def _bce_dp(p, y):
    inside = (p > BCE_EPS) & (p < 1 - BCE_EPS)
    pc = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    return np.where(inside, (pc - y) / (pc * (1 - pc)), 0.0)


# ------------------------------------------------------------------ shape

def _nearest_both(P, Q):
    ip, dp = kernels.nearest(P, Q)
    iq, dq = kernels.nearest(Q, P)
    return ip, dp, iq, dq


def chamfer(P, Q, grad=False, _nn=None):
    """Mean squared nearest distance P->Q plus Q->P; optional gradients (dP, dQ)."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if len(P) == 0 or len(Q) == 0:
        raise EmptyCloud("chamfer of an empty cloud")
    ip, dp, iq, dq = _nn if _nn is not None else _nearest_both(P, Q)
    value = dp.mean() + dq.mean()
    if not grad:
        return float(value)
    gP = 2.0 * (P - Q[ip]) / len(P)
    gQ = 2.0 * (Q - P[iq]) / len(Q)
    dPq = -gQ
    np.add.at(gP, iq, dPq)
    np.add.at(gQ, ip, -2.0 * (P - Q[ip]) / len(P))
    return float(value), gP, gQ


def nn_pairs(P1, P2, theta, _nn=None):
    """``(i, j)`` rows: ``j`` nearest in ``P2`` to ``P1[i]`` and closer than ``theta``."""
    if not theta > 0:
        raise ValueError("theta must be > 0")
    if len(P1) == 0 or len(P2) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    idx, d2 = _nn if _nn is not None else kernels.nearest(P1, P2)
    i = np.nonzero(np.sqrt(d2) < theta)[0]
    return np.stack([i, idx[i]], axis=1).astype(np.int64)


# ------------------------------------------------------------------ grasp success

def _topk_mean(values, k):
    """Mean of the ``k`` largest entries and the positions used (stable order)."""
    k = min(k, len(values))
    sel = np.argsort(-values, kind="stable")[:k]
    return values[sel].mean(), sel


def grasp_success_loss(pred, target: LossTarget, cfg: LossConfig, _pairs=None):
    """Top-k BCE on grasp success in both pairing directions, averaged.

    Returns ``(value, grad, (n_pred_pairs, n_gt_pairs))``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    grad = np.zeros_like(pred)
    if _pairs is None:
        pa = nn_pairs(pred[:, POS], target.points, cfg.theta_nn)
        pb = nn_pairs(target.points, pred[:, POS], cfg.theta_nn)[:, ::-1]
    else:
        pa, pb = _pairs
    p = sigmoid(pred[:, GS])
    dirs = [d for d in (pa, pb) if len(d)]
    if not dirs:
        return 0.0, grad, (len(pa), len(pb))
    total = 0.0
    for d in dirs:
        pi, y = p[d[:, 0]], target.gs[d[:, 1]]
        losses = bce(pi, y)
        m, sel = _topk_mean(losses, cfg.k)
        total += m
        # sigmoid and BCE combine to (p - y) inside the clip window
        inside = (pi[sel] > BCE_EPS) & (pi[sel] < 1 - BCE_EPS)
        g = np.where(inside, pi[sel] - y[sel], 0.0) / (len(sel) * len(dirs))
        np.add.at(grad[:, GS], d[sel, 0], g)
    return float(total / len(dirs)), grad, (len(pa), len(pb))


# ------------------------------------------------------------------ grasp width

def grasp_width_loss(pred, target: LossTarget, cfg: LossConfig, _pairs=None):
    """Mean BCE between soft-maxed width bins and ground-truth one-hot vectors."""
    pred = np.asarray(pred, dtype=np.float64)
    grad = np.zeros_like(pred)
    pairs = _pairs if _pairs is not None else nn_pairs(pred[:, POS], target.pos_points,
                                                       cfg.theta_nn)
    if len(pairs) == 0:
        return 0.0, grad, 0
    i, j = pairs[:, 0], pairs[:, 1]
    q = softmax(pred[i, WB])
    y = target.pos_onehot[j]
    value = bce(q, y).mean()
    gq = _bce_dp(q, y) / q.size
    gz = q * (gq - np.sum(q * gq, axis=1, keepdims=True))
    np.add.at(grad[:, WB], i, gz)
    return float(value), grad, len(pairs)


# ------------------------------------------------------------------ 6-DoF keypoints

def grasp_6dof_loss(pred, target: LossTarget, spec: GripperSpec, cfg: LossConfig, _pairs=None):
    """Mean keypoint distance to the closer of the GT and the finger-swapped GT grasp."""
    pred = np.asarray(pred, dtype=np.float64)
    grad = np.zeros_like(pred)
    pairs = _pairs if _pairs is not None else nn_pairs(pred[:, POS], target.pos_points,
                                                       cfg.theta_nn)
    if len(pairs) == 0:
        return 0.0, grad, 0
    i, j = pairs[:, 0], pairs[:, 1]
    z1, z2 = pred[i, Z1], pred[i, Z2]
    b, a, valid = orthonormalize_batch(z1, z2)
    if not valid.any():
        return 0.0, grad, 0
    i, j, z1, z2, b, a = i[valid], j[valid], z1[valid], z2[valid], b[valid], a[valid]
    bins = np.argmax(pred[i, WB], axis=1)
    width = (bins + 0.5) * spec.bin_size
    s = target.scale
    coef = spec.keypoint_offsets(width)  # (M, 5, 2) relative to t
    cb = coef[..., 0] + 0.5 * width[:, None]
    ca = coef[..., 1] - spec.d0
    kp = s * pred[i, None, POS] + cb[..., None] * b[:, None, :] + ca[..., None] * a[:, None, :]
    diff = kp - target.pos_keypoints[j]
    diff_s = kp - target.pos_keypoints_sym[j]
    dn = np.linalg.norm(diff, axis=-1)
    dns = np.linalg.norm(diff_s, axis=-1)
    d_gt, d_sym = dn.mean(axis=1), dns.mean(axis=1)
    use_sym = d_sym < d_gt
    per = np.where(use_sym, d_sym, d_gt)
    M = len(i)
    value = per.mean()
    dsel = np.where(use_sym[:, None, None], diff_s, diff)
    nsel = np.where(use_sym[:, None], dns, dn)
    with np.errstate(invalid="ignore", divide="ignore"):
        gk = np.where(nsel[..., None] > 0, dsel / nsel[..., None], 0.0) / (5 * M)
    gp = s * gk.sum(axis=1)
    gb = np.sum(cb[..., None] * gk, axis=1)
    ga = np.sum(ca[..., None] * gk, axis=1)
    gz1, gz2 = orthonormalize_backward(z1, z2, b, a, gb, ga)
    np.add.at(grad[:, POS], i, gp)
    np.add.at(grad[:, Z1], i, gz1)
    np.add.at(grad[:, Z2], i, gz2)
    return float(value), grad, M


# ------------------------------------------------------------------ total

def total_loss(pred, sample, cfg: LossConfig = LossConfig(), spec: GripperSpec = GripperSpec()):
    """Chamfer-gated objective; returns ``(LossReport, grad)``.

    Grasp terms (and their gradients) are exactly zero while the chamfer
    loss is above ``cfg.theta_chamfer``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = prepare_target(sample, spec)
    P = pred[:, POS]
    nn = _nearest_both(P, target.points)
    ch, gP, _ = chamfer(P, target.points, grad=True, _nn=nn)
    grad = np.zeros_like(pred)
    grad[:, POS] = cfg.lambda_shape * gP
    report = LossReport(total=cfg.lambda_shape * ch, chamfer=ch)
    report.gate_open = bool(ch <= cfg.theta_chamfer)
    if not report.gate_open:
        return report, grad

    ip, dp, iq, dq = nn
    pa = nn_pairs(P, target.points, cfg.theta_nn, _nn=(ip, dp))
    pb = nn_pairs(target.points, P, cfg.theta_nn, _nn=(iq, dq))[:, ::-1]
    lgs, g_gs, (n_a, n_b) = grasp_success_loss(pred, target, cfg, _pairs=(pa, pb))
    pos_pairs = nn_pairs(P, target.pos_points, cfg.theta_nn)
    lgw, g_gw, n_pos = grasp_width_loss(pred, target, cfg, _pairs=pos_pairs)
    l6, g_6, _ = grasp_6dof_loss(pred, target, spec, cfg, _pairs=pos_pairs)

    wg = cfg.lambda_grasp
    report.gs, report.gw, report.sixdof = lgs, lgw, l6
    grasp = cfg.lambda_gs * lgs + cfg.lambda_gw * lgw + cfg.lambda_6dof * l6
    report.total = float(report.total + wg * grasp)
    grad += wg * (cfg.lambda_gs * g_gs + cfg.lambda_gw * g_gw + cfg.lambda_6dof * g_6)
    report.pairs_gs_pred, report.pairs_gs_gt, report.pairs_pos = n_a, n_b, n_pos
    return report, grad
