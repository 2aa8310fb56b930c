"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Same signatures and results; used when the extension is not built or when
``SSGRASP_PURE=1`` is set.
"""

import math

import numpy as np

_CHUNK = 512


def nearest(P, Q):
    P = np.ascontiguousarray(P, dtype=np.float64)
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    if len(Q) == 0:
        raise ValueError("nearest: empty reference set")
    n = len(P)
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    for s in range(0, n, _CHUNK):
        diff = P[s:s + _CHUNK, None, :] - Q[None, :, :]
        # left-to-right accumulation to match the compiled loop bit for bit
        acc = diff[..., 0] * diff[..., 0]
        for k in range(1, P.shape[1]):
            acc = acc + diff[..., k] * diff[..., k]
        j = np.argmin(acc, axis=1)
        idx[s:s + _CHUNK] = j
        d2[s:s + _CHUNK] = acc[np.arange(len(j)), j]
    return idx, d2


def local_peaks(H, window, tau):
    H = np.asarray(H, dtype=np.float64)
    h, w = H.shape
    half = window // 2
    pad = np.full((h + 2 * half, w + 2 * half), -np.inf)
    pad[half:half + h, half:half + w] = H
    keep = H > tau
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            if dr == 0 and dc == 0:
                continue
            nb = pad[half + dr:half + dr + h, half + dc:half + dc + w]
            earlier = dr < 0 or (dr == 0 and dc < 0)
            if earlier:
                keep &= H > nb
            else:
                keep &= H >= nb
    rows, cols = np.nonzero(keep)
    return rows.astype(np.int64), cols.astype(np.int64)


def _segment_d2(lx, ly, lz, hw, d0, fl, rc, foff):
    xf = hw + foff
    zp = d0 - fl
    ly2 = ly * ly
    dz = np.clip(lz, zp, d0 + rc) - lz
    cands = [
        (lx + xf) ** 2 + ly2 + dz * dz,
        (lx - xf) ** 2 + ly2 + dz * dz,
    ]
    dx = np.clip(lx, -xf, xf) - lx
    cands.append(dx * dx + ly2 + (lz - zp) ** 2)
    dz = np.clip(lz, -d0, zp) - lz
    cands.append(lx * lx + ly2 + dz * dz)
    cands.append((lx + hw) ** 2 + ly2 + lz * lz)
    cands.append((lx - hw) ** 2 + ly2 + lz * lz)
    cands.append((lx + hw) ** 2 + ly2 + (lz - fl) ** 2)
    cands.append((lx - hw) ** 2 + ly2 + (lz - fl) ** 2)
    return np.min(np.stack(cands), axis=0)


def _evaluate_many(pts, nrm, t, R, width, d0, fl, rc, clear, foff, cos_a):
    """Vectorized over K poses: t (K,3), R (K,3,3), width (K,)."""
    d = pts[None, :, :] - t[:, None, :]
    # local coordinate along column c: sum_r R[r, c] * d[r]
    loc = [
        (R[:, None, 0, c] * d[..., 0] + R[:, None, 1, c] * d[..., 1]) + R[:, None, 2, c] * d[..., 2]
        for c in range(3)
    ]
    lx, ly, lz = loc
    hw = 0.5 * width[:, None]
    hz = lz - d0
    in_tube = (ly * ly + hz * hz <= rc * rc) & (np.abs(lx) <= hw + foff)
    d2 = _segment_d2(lx, ly, lz, hw, d0, fl, rc, foff)
    clearance = np.sqrt(d2.min(axis=1))
    has = in_tube.any(axis=1)
    il = np.argmin(np.where(in_tube, lx, np.inf), axis=1)
    ir = np.argmax(np.where(in_tube, lx, -np.inf), axis=1)
    bcol = R[:, :, 0]
    nl = (bcol[:, 0] * nrm[il, 0] + bcol[:, 1] * nrm[il, 1]) + bcol[:, 2] * nrm[il, 2]
    nr = (bcol[:, 0] * nrm[ir, 0] + bcol[:, 1] * nrm[ir, 1]) + bcol[:, 2] * nrm[ir, 2]
    ok = has & (-nl >= cos_a) & (nr >= cos_a) & (clearance >= clear)
    return ok, clearance


def evaluate_grasps(pts, nrm, t, R, width, d0, fl, rc, clear, foff, cos_a):
    pts = np.asarray(pts, dtype=np.float64)
    nrm = np.asarray(nrm, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1, 3)
    R = np.asarray(R, dtype=np.float64).reshape(-1, 3, 3)
    width = np.asarray(width, dtype=np.float64).reshape(-1)
    if len(t) == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    return _evaluate_many(pts, nrm, t, R, width, d0, fl, rc, clear, foff, cos_a)


def _perp_basis(b):
    m = int(np.argmin(np.abs(b)))
    e1 = -b[m] * b
    e1[m] += 1.0
    e1 = e1 / math.sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2])
    e2 = np.array([
        b[1] * e1[2] - b[2] * e1[1],
        b[2] * e1[0] - b[0] * e1[2],
        b[0] * e1[1] - b[1] * e1[0],
    ])
    return e1, e2


def label_points(pts, nrm, w_max, d0, fl, rc, clear, foff, cos_a, n_approach, max_partners):
    pts = np.asarray(pts, dtype=np.float64)
    nrm = np.asarray(nrm, dtype=np.float64)
    n = len(pts)
    gs = np.zeros(n, dtype=bool)
    b_out = np.zeros((n, 3))
    a_out = np.zeros((n, 3))
    w_out = np.zeros(n)
    c_out = np.zeros(n)
    thetas = [(2.0 * math.pi * k) / n_approach for k in range(n_approach)]
    cs = np.array([math.cos(th) for th in thetas])
    sn = np.array([math.sin(th) for th in thetas])
    for i in range(n):
        diff = pts - pts[i]
        dist = np.sqrt((diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]) + diff[:, 2] * diff[:, 2])
        dist[i] = 0.0
        ok = (dist > 1e-12) & (dist <= w_max)
        if not ok.any():
            continue
        js = np.nonzero(ok)[0]
        dd = diff[js]
        dj = dist[js]
        cp = -((nrm[i, 0] * dd[:, 0] + nrm[i, 1] * dd[:, 1]) + nrm[i, 2] * dd[:, 2]) / dj
        cq = ((nrm[js, 0] * dd[:, 0] + nrm[js, 1] * dd[:, 1]) + nrm[js, 2] * dd[:, 2]) / dj
        good = (cp >= cos_a) & (cq >= cos_a)
        if not good.any():
            continue
        js = js[good]
        score = np.minimum(cp[good], cq[good])
        order = np.lexsort((js, -score))[:max_partners]
        for j in js[order]:
            dx, dy, dz = pts[j] - pts[i]
            dist_j = math.sqrt((dx * dx + dy * dy) + dz * dz)
            b = np.array([dx / dist_j, dy / dist_j, dz / dist_j])
            e1, e2 = _perp_basis(b)
            a = cs[:, None] * e1[None, :] + sn[:, None] * e2[None, :]
            hw = 0.5 * dist_j
            t = (pts[i][None, :] + hw * b[None, :]) - d0 * a
            axb = np.stack([
                a[:, 1] * b[2] - a[:, 2] * b[1],
                a[:, 2] * b[0] - a[:, 0] * b[2],
                a[:, 0] * b[1] - a[:, 1] * b[0],
            ], axis=1)
            R = np.stack([np.broadcast_to(b, a.shape), axb, a], axis=-1)
            okk, clr = _evaluate_many(pts, nrm, t, R, np.full(n_approach, dist_j),
                                      d0, fl, rc, clear, foff, cos_a)
            if okk.any():
                k = int(np.argmax(np.where(okk, clr, -1.0)))
                gs[i] = True
                b_out[i] = b
                a_out[i] = a[k]
                w_out[i] = dist_j
                c_out[i] = clr[k]
                break
    return gs, b_out, a_out, w_out, c_out


def adam_update(w, g, m, v, step, b1, b2, inv_sqrt_c2, eps):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (g * g) * (1.0 - b2)
    w -= (m / (np.sqrt(v) * inv_sqrt_c2 + eps)) * step
