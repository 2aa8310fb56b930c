"""Compiled and numpy kernels must agree bit for bit."""

import numpy as np
import pytest

from ssgrasp import kernels
from ssgrasp.grasp_core import GripperSpec, grasp_poses_batch
from ssgrasp.labeler import LabelParams, label_dense_grasps
from ssgrasp.shapes import make_canonical_shape

try:
    C = kernels.get_backend("cython")
except ImportError:  # pragma: no cover
    C = None
PY = kernels.get_backend("python")
needs_c = pytest.mark.skipif(C is None, reason="compiled kernels not built")


def _same(a, b):
    if isinstance(a, tuple):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            _same(x, y)
    else:
        a, b = np.asarray(a), np.asarray(b)
        assert a.shape == b.shape
        assert np.array_equal(a, b), np.max(np.abs(a.astype(float) - b.astype(float)))


def test_backend_selection():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.get_backend() is (C if kernels.BACKEND == "cython" else PY)
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(0)
    P, Q = rng.normal(size=(100, 3)), rng.normal(size=(80, 3))
    idx, d2 = kernels.nearest(P, Q)
    full = np.sum((P[:, None] - Q[None]) ** 2, axis=-1)
    assert np.array_equal(idx, np.argmin(full, axis=1))
    assert np.allclose(d2, full.min(axis=1), rtol=0, atol=1e-14)


def test_nearest_ties_take_lowest_index():
    Q = np.array([[1.0, 0, 0], [-1.0, 0, 0], [1.0, 0, 0]])
    idx, _ = kernels.nearest(np.zeros((1, 3)), Q)
    assert idx[0] == 0


@needs_c
def test_nearest_parity():
    rng = np.random.default_rng(1)
    P, Q = rng.normal(size=(300, 3)), rng.normal(size=(257, 3))
    _same(C.nearest(P, Q), PY.nearest(P, Q))


@needs_c
@pytest.mark.parametrize("window", [1, 3, 5])
def test_local_peaks_parity(window):
    rng = np.random.default_rng(window)
    H = rng.random((37, 53))
    H[5:8, 5:8] = 0.9  # plateau
    _same(C.local_peaks(H, window, 0.3), PY.local_peaks(H, window, 0.3))


@pytest.fixture(scope="module")
def grasp_case():
    spec, lp = GripperSpec(), LabelParams()
    cloud = make_canonical_shape("bottle", n_points=256, seed=3)
    lab = label_dense_grasps(cloud, 0.15, spec, lp)
    idx = lab.positive
    pts, nrm = cloud.points * 0.15, cloud.normals
    rng = np.random.default_rng(4)
    t, R = grasp_poses_batch(pts[idx], lab.approach[idx], lab.baseline[idx], lab.width[idx], spec)
    t = np.concatenate([t, t + rng.normal(0, 0.01, t.shape)])
    R = np.concatenate([R, R])
    w = np.concatenate([lab.width[idx], lab.width[idx]])
    return spec, lp, pts, nrm, t, R, w


@needs_c
def test_evaluate_grasps_parity(grasp_case):
    spec, lp, pts, nrm, t, R, w = grasp_case
    args = (pts, nrm, t, R, w, spec.d0, spec.finger_len, lp.contact_radius, lp.clearance,
            lp.finger_offset, lp.cos_friction)
    out_c, out_py = C.evaluate_grasps(*args), PY.evaluate_grasps(*args)
    _same(out_c, out_py)


@needs_c
def test_label_points_parity(grasp_case):
    spec, lp, pts, nrm = grasp_case[:4]
    args = (pts, nrm, spec.w_max, spec.d0, spec.finger_len, lp.contact_radius, lp.clearance,
            lp.finger_offset, lp.cos_friction, lp.n_approach, lp.max_partners)
    _same(C.label_points(*args), PY.label_points(*args))


@needs_c
def test_adam_parity():
    n = 1000
    state = {}
    for name, mod in (("c", C), ("py", PY)):
        r = np.random.default_rng(6)
        w, m, v = r.normal(size=n), np.zeros(n), np.zeros(n)
        for step in range(1, 6):
            g = r.normal(size=n)
            mod.adam_update(w, g, m, v, 1e-3, 0.9, 0.999, 1 / np.sqrt(1 - 0.999 ** step), 1e-8)
        state[name] = (w, m, v)
    _same(state["c"], state["py"])


def test_adam_matches_textbook():
    rng = np.random.default_rng(7)
    w0, g = rng.normal(size=50), rng.normal(size=50)
    w, m, v = w0.copy(), np.zeros(50), np.zeros(50)
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    kernels.adam_update(w, g, m, v, lr / (1 - b1), b1, b2, 1 / np.sqrt(1 - b2), eps)
    m_hat, v_hat = (1 - b1) * g / (1 - b1), (1 - b2) * g ** 2 / (1 - b2)
    expect = w0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert np.allclose(w, expect, rtol=1e-9, atol=1e-12)
