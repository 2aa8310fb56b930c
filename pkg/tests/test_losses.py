import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssgrasp.errors import EmptyCloud
from ssgrasp.grasp_core import GripperSpec, grasp_poses_batch, keypoints_batch
from ssgrasp.losses import (
    LossConfig, chamfer, grasp_6dof_loss, grasp_success_loss, grasp_width_loss, nn_pairs,
    prepare_target, total_loss,
)
from helpers import (
    brute_chamfer, brute_nearest, central_fd, noisy_prediction, perfect_prediction,
    random_sample, rel_err,
)

SPEC = GripperSpec()
OPEN = LossConfig(theta_chamfer=1.0, theta_nn=0.05, k=16)


# ------------------------------------------------------------------ chamfer

def test_chamfer_identity_and_single_point():
    P = np.random.default_rng(0).normal(size=(20, 3))
    assert chamfer(P, P) == 0.0
    assert chamfer([[0, 0, 0]], [[1, 0, 0]]) == 2.0


def test_chamfer_matches_brute_force_and_fd():
    rng = np.random.default_rng(1)
    for _ in range(5):
        P, Q = rng.normal(size=(64, 3)), rng.normal(size=(64, 3))
        v, gP, gQ = chamfer(P, Q, grad=True)
        assert abs(v - brute_chamfer(P, Q)) < 1e-12
        assert rel_err(gP, central_fd(lambda x: chamfer(x, Q), P)) < 1e-5
        assert rel_err(gQ, central_fd(lambda x: chamfer(P, x), Q)) < 1e-5


def test_chamfer_empty_raises():
    with pytest.raises(EmptyCloud):
        chamfer(np.zeros((0, 3)), np.zeros((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**31))
def test_chamfer_symmetric_nonnegative(n, m, seed):
    rng = np.random.default_rng(seed)
    P, Q = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert chamfer(P, Q) == pytest.approx(chamfer(Q, P), abs=1e-14)
    assert chamfer(P, Q) >= 0


# ------------------------------------------------------------------ pairing

def test_nn_pairs_identity_threshold_and_brute_force():
    rng = np.random.default_rng(2)
    P = rng.normal(size=(50, 3))
    assert np.array_equal(nn_pairs(P, P, 0.01), np.stack([np.arange(50)] * 2, axis=1))
    Q = P + 10.0
    assert nn_pairs(P, Q, 1.0).shape == (0, 2)
    Q = rng.normal(size=(40, 3))
    j, d2 = brute_nearest(P, Q)
    keep = np.sqrt(d2) < 0.4
    expect = np.stack([np.nonzero(keep)[0], j[keep]], axis=1)
    assert np.array_equal(nn_pairs(P, Q, 0.4), expect)
    with pytest.raises(ValueError):
        nn_pairs(P, Q, 0.0)


# ------------------------------------------------------------------ grasp success

def test_gs_perfect_prediction_small():
    s = random_sample(np.random.default_rng(3))
    tgt = prepare_target(s, SPEC)
    v, _, _ = grasp_success_loss(perfect_prediction(s), tgt, OPEN)
    assert v < 1e-5


def test_gs_topk_hand_computed():
    rng = np.random.default_rng(4)
    s = random_sample(rng, n=8, pos_frac=0.5)
    tgt = prepare_target(s, SPEC)
    probs = [0.9, 0.2, 0.6, 0.35, 0.05, 0.75, 0.5, 0.99]
    pred = perfect_prediction(s)
    pred[:, 3] = [math.log(p / (1 - p)) for p in probs]
    labels = tgt.gs
    terms = sorted((-(y * math.log(p) + (1 - y) * math.log(1 - p))
                    for p, y in zip(probs, labels)), reverse=True)
    expect = sum(terms[:4]) / 4  # both directions pair (i, i), so their means coincide
    v, _, counts = grasp_success_loss(pred, tgt, LossConfig(theta_nn=0.01, k=4))
    assert counts == (8, 8)
    assert v == pytest.approx(expect, rel=1e-12)


def test_gs_topk_large_k_is_plain_mean():
    rng = np.random.default_rng(5)
    s = random_sample(rng, n=24)
    tgt = prepare_target(s, SPEC)
    pred = perfect_prediction(s)
    pred[:, 3] = rng.normal(size=24)
    p = 1 / (1 + np.exp(-pred[:, 3]))
    plain = np.mean(-(tgt.gs * np.log(p) + (1 - tgt.gs) * np.log(1 - p)))
    for k in (24, 100, 512):
        v, _, _ = grasp_success_loss(pred, tgt, LossConfig(theta_nn=0.01, k=k))
        assert v == pytest.approx(plain, rel=1e-12)


def test_gs_no_pairs_is_zero():
    s = random_sample(np.random.default_rng(6))
    pred = perfect_prediction(s)
    pred[:, :3] += 5.0
    v, g, _ = grasp_success_loss(pred, prepare_target(s, SPEC), OPEN)
    assert v == 0.0 and not g.any()


# ------------------------------------------------------------------ width

def test_width_perfect_and_uniform():
    s = random_sample(np.random.default_rng(7))
    tgt = prepare_target(s, SPEC)
    pred = perfect_prediction(s)
    assert grasp_width_loss(pred, tgt, OPEN)[0] < 1e-5
    pred[:, 10:] = 0.0
    expect = -(math.log(0.1) + 9 * math.log(0.9)) / 10
    assert grasp_width_loss(pred, tgt, OPEN)[0] == pytest.approx(expect, rel=1e-12)
    assert expect == pytest.approx(0.3251, abs=1e-4)


def test_width_no_positives_is_zero():
    s = random_sample(np.random.default_rng(8), pos_frac=0.0)
    v, g, n = grasp_width_loss(perfect_prediction(s), prepare_target(s, SPEC), OPEN)
    assert v == 0.0 and n == 0 and not g.any()


# ------------------------------------------------------------------ 6-DoF

def _single_grasp(rng, scale=0.2):
    s = random_sample(rng, n=6, scale=scale, pos_frac=1.0)
    return s, prepare_target(s, SPEC)


def test_6dof_identity_flip_translation():
    rng = np.random.default_rng(9)
    for _ in range(10):
        s, tgt = _single_grasp(rng)
        pairs = np.stack([np.arange(6)] * 2, axis=1)
        pred = perfect_prediction(s)
        assert grasp_6dof_loss(pred, tgt, SPEC, OPEN, _pairs=pairs)[0] < 1e-12
        # finger swap: baseline reversed, contact point moved to the other finger
        lab = s.labels
        flip = pred.copy()
        flip[:, 4:7] = -lab.baseline
        flip[:, :3] = s.cloud.points + lab.width[:, None] * lab.baseline / s.scale
        assert grasp_6dof_loss(flip, tgt, SPEC, OPEN, _pairs=pairs)[0] < 1e-12
        delta = rng.normal(size=3) * 0.01
        moved = pred.copy()
        moved[:, :3] += delta / s.scale
        v = grasp_6dof_loss(moved, tgt, SPEC, OPEN, _pairs=pairs)[0]
        assert v == pytest.approx(np.linalg.norm(delta), rel=1e-9)


def test_6dof_flip_equals_rotation_about_approach():
    rng = np.random.default_rng(10)
    s, tgt = _single_grasp(rng)
    lab = s.labels
    t, R = grasp_poses_batch(s.cloud.points * s.scale, lab.approach, lab.baseline,
                             lab.width, SPEC)
    Rz = np.diag([-1.0, -1.0, 1.0])
    kp = keypoints_batch(t, R @ Rz, lab.width, SPEC)
    assert np.allclose(kp, tgt.pos_keypoints_sym, atol=1e-12)


# ------------------------------------------------------------------ total

def test_total_closed_gate():
    rng = np.random.default_rng(11)
    s = random_sample(rng, n=16)
    pred = perfect_prediction(s)
    pred[:, :3] = s.cloud.points + rng.normal(0, 0.05, (16, 3))
    ch = chamfer(pred[:, :3], s.cloud.points)
    cfg = LossConfig(theta_chamfer=ch / 2, lambda_shape=1.7)
    rep, g = total_loss(pred, s, cfg, SPEC)
    assert not rep.gate_open
    assert rep.total == pytest.approx(1.7 * ch, rel=1e-14)
    assert rep.gs == rep.gw == rep.sixdof == 0.0
    assert not g[:, 3:].any()


def test_total_perfect_is_near_zero():
    s = random_sample(np.random.default_rng(12), n=32)
    rep, _ = total_loss(perfect_prediction(s), s, LossConfig(), SPEC)
    assert rep.gate_open and rep.chamfer == 0.0
    assert rep.total < 1e-5


def test_total_composition():
    rng = np.random.default_rng(13)
    s = random_sample(rng, n=32)
    pred = noisy_prediction(s, rng, pos_noise=0.003)
    cfg = LossConfig(theta_chamfer=1.0, theta_nn=0.02, lambda_grasp=0.7, lambda_6dof=0.3, k=10)
    rep, _ = total_loss(pred, s, cfg, SPEC)
    assert rep.gate_open
    expect = rep.chamfer + 0.7 * (rep.gs + rep.gw + 0.3 * rep.sixdof)
    assert rep.total == pytest.approx(expect, rel=1e-14)
    assert min(rep.chamfer, rep.gs, rep.gw, rep.sixdof) >= 0


def _fd_instance(seed, gate_open, n=24):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, n=n, bin_centers=False)
    pred = noisy_prediction(s, rng, pos_noise=0.004)
    ch = chamfer(pred[:, :3], s.cloud.points)
    theta = ch * 10 if gate_open else ch / 10
    cfg = LossConfig(theta_chamfer=theta, theta_nn=0.015, k=int(rng.integers(3, 12)))
    return s, pred, cfg


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("gate_open", [True, False])
def test_total_gradient_fd(seed, gate_open):
    s, pred, cfg = _fd_instance(seed, gate_open)
    rep, g = total_loss(pred, s, cfg, SPEC)
    assert rep.gate_open == gate_open
    fd = central_fd(lambda x: total_loss(x, s, cfg, SPEC)[0].total, pred)
    assert rel_err(g, fd) < 1e-4
    if not gate_open:
        assert np.all(g[:, 3:] == 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_each_term_gradient_fd(seed):
    s, pred, cfg = _fd_instance(100 + seed, True)
    tgt = prepare_target(s, SPEC)
    terms = {
        "gs": lambda x: grasp_success_loss(x, tgt, cfg),
        "gw": lambda x: grasp_width_loss(x, tgt, cfg),
        "6dof": lambda x: grasp_6dof_loss(x, tgt, SPEC, cfg),
    }
    for name, f in terms.items():
        v, g = f(pred)[:2]
        assert v > 0, name
        fd = central_fd(lambda x: f(x)[0], pred)
        assert rel_err(g, fd) < 1e-4, name
