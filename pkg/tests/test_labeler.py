import math

import numpy as np
import pytest

from ssgrasp.errors import MissingNormals
from ssgrasp.grasp_core import GraspPose, GripperSpec, grasp_pose_from_params
from ssgrasp.labeler import (
    CanonicalObjectSample,
    DenseGraspLabel,
    LabelParams,
    check_grasp_success,
    interpolate_labels,
    label_dense_grasps,
)
from ssgrasp.shapes import UnitCanonicalCloud, make_canonical_shape

SPHERE_UNIT_DIAMETER = 1 / math.sqrt(3)  # unit bbox diagonal


def sphere(n=512, seed=0):
    return make_canonical_shape("sphere", n_points=n, seed=seed)


def antipodal_oracle(points, normals, w_max, cos_a):
    """All-pairs scan: does each point have any friction-valid partner within w_max?"""
    n = len(points)
    out = np.zeros(n, dtype=bool)
    for i in range(n):
        d = points - points[i]
        dist = np.linalg.norm(d, axis=1)
        for j in range(n):
            if j == i or dist[j] <= 1e-12 or dist[j] > w_max:
                continue
            u = d[j] / dist[j]
            if -normals[i] @ u >= cos_a and normals[j] @ u >= cos_a:
                out[i] = True
                break
    return out


def test_large_sphere_ungraspable(spec):
    lab = label_dense_grasps(sphere(), 1.5 * spec.w_max / SPHERE_UNIT_DIAMETER, spec)
    assert lab.gs.sum() == 0
    assert np.all(lab.width == 0)


def test_small_sphere_graspable(spec):
    c = sphere(256)
    D = 0.05
    scale = D / SPHERE_UNIT_DIAMETER
    lab = label_dense_grasps(c, scale, spec)
    assert lab.gs.mean() >= 0.95
    assert np.all(np.abs(lab.width[lab.gs] - D) <= 0.005)
    oracle = antipodal_oracle(c.points * scale, c.normals, spec.w_max,
                              LabelParams().cos_friction)
    # the labeler only adds clearance on top of the antipodal condition
    assert np.all(oracle[lab.gs])


def test_positive_label_invariants(spec):
    c = make_canonical_shape("can", n_points=256, seed=4)
    lab = label_dense_grasps(c, 0.12, spec)
    pos = lab.positive
    assert len(pos) > 0
    assert np.all((lab.width[pos] > 0) & (lab.width[pos] <= spec.w_max))
    assert np.max(np.abs(np.sum(lab.baseline[pos] * lab.approach[pos], axis=1))) < 1e-9
    neg = np.setdiff1d(np.arange(len(c)), pos)
    assert np.all(lab.width[neg] == 0)


def _cylinder(diam, height, n=512, seed=0):
    r = 0.3
    h = r * 2 * height / diam
    c = make_canonical_shape("cylinder", {"radius": r, "height": h}, n_points=n, seed=seed)
    diag = math.sqrt(2 * (2 * r) ** 2 + h ** 2)
    return c, diam * diag / (2 * r)


def _lateral(c):
    # lateral points have horizontal normals
    return np.abs(c.normals[:, 1]) < 1e-9


def test_cylinder_lateral_points(spec):
    c, scale = _cylinder(0.06, 0.20)
    lat = _lateral(c)
    lab = label_dense_grasps(c, scale, spec)
    assert lab.gs[lat].mean() >= 0.95
    assert np.median(lab.width[lat & lab.gs]) == pytest.approx(0.06, rel=0.03)
    # same cloud, diameter grown past the jaw opening
    lab2 = label_dense_grasps(c, scale * 0.09 / 0.06, spec)
    assert lab2.gs[lat].sum() == 0


@pytest.mark.parametrize("shape", ["sphere", "cylinder"])
def test_monotone_in_scale(shape, spec):
    if shape == "sphere":
        c, s0 = sphere(256), 0.04 / SPHERE_UNIT_DIAMETER
    else:
        c, s0 = _cylinder(0.04, 0.2, n=256)
    prev = None
    for f in (1.0, 1.4, 1.8, 2.2):
        gs = label_dense_grasps(c, s0 * f, spec).gs
        if prev is not None:
            assert np.all(prev | ~gs)  # gs(s2) subset of gs(s1)
        prev = gs


def test_labels_pass_oracle(spec):
    for cat, scale in (("bottle", 0.12), ("mug", 0.12), ("can", 0.1), ("camera", 0.1)):
        c = make_canonical_shape(cat, n_points=256, seed=1)
        lab = label_dense_grasps(c, scale, spec)
        for i in lab.positive:
            P = grasp_pose_from_params(c.points[i] * scale, lab.approach[i], lab.baseline[i],
                                       lab.width[i], spec)
            assert check_grasp_success(P, c, scale, spec)


def _sphere_grasp(spec):
    c = sphere(256)
    scale = 0.05 / SPHERE_UNIT_DIAMETER
    lab = label_dense_grasps(c, scale, spec)
    i = lab.positive[0]
    P = grasp_pose_from_params(c.points[i] * scale, lab.approach[i], lab.baseline[i],
                               lab.width[i], spec)
    return c, scale, P


def test_translated_grasp_fails(spec):
    c, scale, P = _sphere_grasp(spec)
    assert check_grasp_success(P, c, scale, spec)
    moved = GraspPose(P.t + 0.05 * P.baseline, P.R, P.width)
    assert not check_grasp_success(moved, c, scale, spec)


def test_grasp_in_empty_space_fails(spec):
    c, scale, P = _sphere_grasp(spec)
    far = GraspPose(P.t + np.array([1.0, 1.0, 1.0]), P.R, P.width)
    assert not check_grasp_success(far, c, scale, spec)


def test_missing_normals(spec):
    c = sphere(128)
    bad = UnitCanonicalCloud("sphere", c.points, None)
    with pytest.raises(MissingNormals):
        label_dense_grasps(bad, 0.1, spec)
    with pytest.raises(ValueError):
        label_dense_grasps(c, 0.0, spec)


def _grid_box(size=0.04, k=5):
    """Metric axis-aligned cube with interior grid points on each face, exact normals."""
    u = (np.arange(k) + 0.5) / k * size - size / 2
    U, V = np.meshgrid(u, u, indexing="ij")
    U, V = U.ravel(), V.ravel()
    pts, nrm = [], []
    for ax in range(3):
        o1, o2 = [a for a in range(3) if a != ax]
        for sgn in (-1.0, 1.0):
            p = np.zeros((len(U), 3))
            p[:, ax] = sgn * size / 2
            p[:, o1], p[:, o2] = U, V
            n = np.zeros_like(p)
            n[:, ax] = sgn
            pts.append(p)
            nrm.append(n)
    return UnitCanonicalCloud("box", np.concatenate(pts), np.concatenate(nrm))


def test_zero_friction_keeps_only_opposing_faces(spec):
    c = _grid_box()
    lab = label_dense_grasps(c, 1.0, spec, LabelParams(friction_deg=1e-4))
    assert lab.gs.mean() > 0.5
    for i in lab.positive:
        b = lab.baseline[i]
        k = int(np.argmax(np.abs(b)))
        assert abs(abs(b[k]) - 1) < 1e-12
        # the partner face is the one opposite the point's own face
        assert c.normals[i][k] == -np.sign(b[k])


def test_zero_friction_sphere_keeps_diameters(spec):
    # pairs of exactly antipodal points on a sphere of diameter 0.05
    rng = np.random.default_rng(0)
    d = rng.normal(size=(64, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = np.concatenate([d, -d]) * 0.025
    c = UnitCanonicalCloud("sphere", pts, pts / 0.025)
    lab = label_dense_grasps(c, 1.0, spec, LabelParams(friction_deg=1e-4))
    assert lab.gs.all()
    np.testing.assert_allclose(lab.width, 0.05, rtol=1e-12)


def test_interpolate_matches_bruteforce(rng):
    for _ in range(20):
        L = rng.uniform(-0.5, 0.5, size=(rng.integers(5, 128), 3))
        Q = rng.uniform(-0.5, 0.5, size=(rng.integers(1, 128), 3))
        theta = 0.01 if rng.random() < 0.5 else 0.2
        got = interpolate_labels(Q, L, theta)
        d = np.linalg.norm(Q[:, None] - L[None], axis=-1)
        j = np.argmin(d, axis=1)
        want = np.where(d[np.arange(len(Q)), j] < theta, j, -1)
        np.testing.assert_array_equal(got, want)


def test_interpolate_exact_and_far(rng):
    L = rng.normal(size=(30, 3))
    np.testing.assert_array_equal(interpolate_labels(L, L, 0.01), np.arange(30))
    assert np.all(interpolate_labels(L + 100.0, L, 0.01) == -1)
    with pytest.raises(ValueError):
        interpolate_labels(L, L, 0.0)


def test_label_array_roundtrip(spec):
    c = make_canonical_shape("can", n_points=128, seed=0)
    lab = label_dense_grasps(c, 0.1, spec)
    back = DenseGraspLabel.from_array(lab.as_array())
    np.testing.assert_array_equal(back.gs, lab.gs)
    np.testing.assert_array_equal(back.baseline, lab.baseline)
    np.testing.assert_array_equal(back.width, lab.width)
    s = CanonicalObjectSample("can", c, 0.1, lab)
    t, R, w = s.grasp_poses(spec)
    assert len(t) == lab.gs.sum()
    with pytest.raises(ValueError):
        CanonicalObjectSample("can", c, 0.1, lab.take(np.arange(5)))
