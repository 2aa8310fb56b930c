"""Shared builders and oracles for the test suite."""

import numpy as np

from ssgrasp.grasp_core import GripperSpec
from ssgrasp.labeler import CanonicalObjectSample, DenseGraspLabel
from ssgrasp.shapes import UnitCanonicalCloud


def random_orthonormal_pairs(rng, n):
    b = rng.normal(size=(n, 3))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    a = rng.normal(size=(n, 3))
    a -= np.sum(a * b, axis=1, keepdims=True) * b
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    return b, a


def random_sample(rng, n=32, scale=0.15, pos_frac=0.5, spec=GripperSpec(), bin_centers=True):
    """A labeled sample with random points, labels and (optionally) bin-center widths."""
    pts = rng.uniform(-0.4, 0.4, size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    gs = rng.random(n) < pos_frac
    b, a = random_orthonormal_pairs(rng, n)
    if bin_centers:
        w = (rng.integers(0, spec.n_width_bins, n) + 0.5) * spec.bin_size
    else:
        w = rng.uniform(0, spec.w_max, n)
    b[~gs] = 0
    a[~gs] = 0
    w[~gs] = 0
    lab = DenseGraspLabel(gs, b, a, w)
    return CanonicalObjectSample("can", UnitCanonicalCloud("can", pts, nrm), scale, lab)


def perfect_prediction(sample, spec=GripperSpec(), logit=40.0):
    """Raw decoder output that reproduces the sample's labels exactly."""
    n = len(sample.cloud)
    lab = sample.labels
    raw = np.zeros((n, spec.n_channels))
    raw[:, :3] = sample.cloud.points
    raw[:, 3] = np.where(lab.gs, logit, -logit)
    b, a = lab.baseline.copy(), lab.approach.copy()
    b[~lab.gs] = [1.0, 0, 0]
    a[~lab.gs] = [0, 1.0, 0]
    raw[:, 4:7] = b
    raw[:, 7:10] = a
    bins = np.floor(lab.width / spec.bin_size).astype(int).clip(0, spec.n_width_bins - 1)
    raw[np.arange(n), 10 + bins] = logit
    return raw


def noisy_prediction(sample, rng, pos_noise=0.002, spec=GripperSpec()):
    n = len(sample.cloud)
    raw = rng.normal(size=(n, spec.n_channels))
    perm = rng.permutation(n)
    raw[:, :3] = sample.cloud.points[perm] + rng.normal(0, pos_noise, (n, 3))
    return raw


def central_fd(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


def brute_nearest(P, Q):
    d = np.sum((P[:, None, :] - Q[None, :, :]) ** 2, axis=-1)
    j = np.argmin(d, axis=1)
    return j, d[np.arange(len(P)), j]


def brute_chamfer(P, Q):
    return brute_nearest(P, Q)[1].mean() + brute_nearest(Q, P)[1].mean()
