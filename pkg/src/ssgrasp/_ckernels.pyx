# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics mirror ssgrasp._pykernels exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, fabs, M_PI

cnp.import_array()

# number of body segments used by the clearance test (see _segment_d2)
DEF N_SEG = 9


def nearest(const double[:, ::1] P, const double[:, ::1] Q):
    """Index and squared distance of the nearest Q row for each P row (first on ties)."""
    cdef Py_ssize_t n = P.shape[0], m = Q.shape[0], dim = P.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double best, d, diff
    cdef Py_ssize_t bj
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] idx_v = idx
    cdef double[::1] d2_v = d2
    if m == 0:
        raise ValueError("nearest: empty reference set")
    with nogil:
        for i in range(n):
            best = 1e308
            bj = 0
            for j in range(m):
                d = 0.0
                for k in range(dim):
                    diff = P[i, k] - Q[j, k]
                    d = d + diff * diff
                if d < best:
                    best = d
                    bj = j
            idx_v[i] = bj
            d2_v[i] = best
    return idx, d2


def local_peaks(const double[:, ::1] H, int window, double tau):
    """Raster-ordered (row, col) of pixels that are > tau and win their window."""
    cdef Py_ssize_t h = H.shape[0], w = H.shape[1]
    cdef int half = window // 2
    cdef Py_ssize_t r, c, rr, cc
    cdef double v, u
    cdef bint keep
    rows = []
    cols = []
    for r in range(h):
        for c in range(w):
            v = H[r, c]
            if not v > tau:
                continue
            keep = True
            for rr in range(max(r - half, 0), min(r + half + 1, h)):
                for cc in range(max(c - half, 0), min(c + half + 1, w)):
                    u = H[rr, cc]
                    if u > v or (u == v and (rr < r or (rr == r and cc < c))):
                        keep = False
                        break
                if not keep:
                    break
            if keep:
                rows.append(r)
                cols.append(c)
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


cdef inline double _clampd(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline double _segment_d2(double lx, double ly, double lz, double hw, double d0,
                               double fl, double rc, double foff) nogil:
    """Squared distance from a gripper-frame point to the closest body segment."""
    cdef double xf = hw + foff
    cdef double zp = d0 - fl
    cdef double best, d, dz, dx
    # fingers: x = -/+ xf, y = 0, z in [d0 - fl, d0 + rc]
    dz = _clampd(lz, zp, d0 + rc) - lz
    dx = lx + xf
    best = dx * dx + ly * ly + dz * dz
    dx = lx - xf
    d = dx * dx + ly * ly + dz * dz
    if d < best:
        best = d
    # palm: z = d0 - fl, x in [-xf, xf]
    dx = _clampd(lx, -xf, xf) - lx
    dz = lz - zp
    d = dx * dx + ly * ly + dz * dz
    if d < best:
        best = d
    # wrist: x = 0, z in [-d0, d0 - fl]
    dz = _clampd(lz, -d0, zp) - lz
    d = lx * lx + ly * ly + dz * dz
    if d < best:
        best = d
    # finger roots (+-hw, 0, 0) and tips (+-hw, 0, fl)
    dx = lx + hw
    d = dx * dx + ly * ly + lz * lz
    if d < best:
        best = d
    dx = lx - hw
    d = dx * dx + ly * ly + lz * lz
    if d < best:
        best = d
    dz = lz - fl
    dx = lx + hw
    d = dx * dx + ly * ly + dz * dz
    if d < best:
        best = d
    dx = lx - hw
    d = dx * dx + ly * ly + dz * dz
    if d < best:
        best = d
    return best


cdef int _evaluate(const double[:, ::1] pts, const double[:, ::1] nrm,
                   double* t, double* R, double width,
                   double d0, double fl, double rc, double clear, double foff,
                   double cos_a, double* clearance_out) nogil:
    """R is row-major 3x3 whose columns are (b, a x b, a)."""
    cdef Py_ssize_t n = pts.shape[0], i
    cdef double hw = 0.5 * width
    cdef double dx, dy, dz, lx, ly, lz, hz, rad2, d, min_d2 = 1e308
    cdef double umin = 1e308, umax = -1e308
    cdef Py_ssize_t il = -1, ir = -1
    cdef double rc2 = rc * rc
    cdef double xlim = hw + foff
    cdef double nl, nr
    for i in range(n):
        dx = pts[i, 0] - t[0]
        dy = pts[i, 1] - t[1]
        dz = pts[i, 2] - t[2]
        lx = (R[0] * dx + R[3] * dy) + R[6] * dz
        ly = (R[1] * dx + R[4] * dy) + R[7] * dz
        lz = (R[2] * dx + R[5] * dy) + R[8] * dz
        hz = lz - d0
        rad2 = ly * ly + hz * hz
        if rad2 <= rc2 and fabs(lx) <= xlim:
            if lx < umin:
                umin = lx
                il = i
            if lx > umax:
                umax = lx
                ir = i
        d = _segment_d2(lx, ly, lz, hw, d0, fl, rc, foff)
        if d < min_d2:
            min_d2 = d
    clearance_out[0] = sqrt(min_d2)
    if il < 0:
        return 0
    nl = (R[0] * nrm[il, 0] + R[3] * nrm[il, 1]) + R[6] * nrm[il, 2]
    nr = (R[0] * nrm[ir, 0] + R[3] * nrm[ir, 1]) + R[6] * nrm[ir, 2]
    if not (-nl >= cos_a and nr >= cos_a):
        return 0
    if not clearance_out[0] >= clear:
        return 0
    return 1


def evaluate_grasps(const double[:, ::1] pts, const double[:, ::1] nrm,
                    const double[:, ::1] t, const double[:, :, ::1] R,
                    const double[::1] width, double d0, double fl, double rc,
                    double clear, double foff, double cos_a):
    cdef Py_ssize_t k, K = t.shape[0], r, c
    ok = np.zeros(K, dtype=bool)
    clr = np.zeros(K, dtype=np.float64)
    cdef cnp.npy_bool[::1] ok_v = ok
    cdef double[::1] clr_v = clr
    cdef double tt[3]
    cdef double RR[9]
    cdef double cval
    with nogil:
        for k in range(K):
            for r in range(3):
                tt[r] = t[k, r]
                for c in range(3):
                    RR[3 * r + c] = R[k, r, c]
            ok_v[k] = _evaluate(pts, nrm, tt, RR, width[k], d0, fl, rc, clear, foff,
                                cos_a, &cval)
            clr_v[k] = cval
    return ok, clr


cdef void _perp_basis(double* b, double* e1, double* e2) nogil:
    cdef int k, m = 0
    cdef double best = fabs(b[0]), nrm
    for k in range(1, 3):
        if fabs(b[k]) < best:
            best = fabs(b[k])
            m = k
    for k in range(3):
        e1[k] = -b[m] * b[k]
    e1[m] = e1[m] + 1.0
    nrm = sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2])
    for k in range(3):
        e1[k] = e1[k] / nrm
    e2[0] = b[1] * e1[2] - b[2] * e1[1]
    e2[1] = b[2] * e1[0] - b[0] * e1[2]
    e2[2] = b[0] * e1[1] - b[1] * e1[0]


def label_points(const double[:, ::1] pts, const double[:, ::1] nrm, double w_max,
                 double d0, double fl, double rc, double clear, double foff,
                 double cos_a, int n_approach, int max_partners):
    """Antipodal partner search plus approach selection for every point (metric cloud)."""
    cdef Py_ssize_t n = pts.shape[0], i, j, k, s, m
    gs = np.zeros(n, dtype=bool)
    b_out = np.zeros((n, 3), dtype=np.float64)
    a_out = np.zeros((n, 3), dtype=np.float64)
    w_out = np.zeros(n, dtype=np.float64)
    c_out = np.zeros(n, dtype=np.float64)
    cdef cnp.npy_bool[::1] gs_v = gs
    cdef double[:, ::1] b_v = b_out
    cdef double[:, ::1] a_v = a_out
    cdef double[::1] w_v = w_out
    cdef double[::1] c_v = c_out
    cand_j_arr = np.empty(max(max_partners, 1), dtype=np.int64)
    cand_s_arr = np.empty(max(max_partners, 1), dtype=np.float64)
    cdef cnp.int64_t[::1] cand_j = cand_j_arr
    cdef double[::1] cand_s = cand_s_arr
    cdef int n_cand, pos
    cdef double dx, dy, dz, dist, cp, cq, score, theta, clr, best_clr
    cdef double b[3]
    cdef double e1[3]
    cdef double e2[3]
    cdef double a[3]
    cdef double best_a[3]
    cdef double tt[3]
    cdef double RR[9]
    cdef double hw
    cdef int found
    with nogil:
        for i in range(n):
            n_cand = 0
            for j in range(n):
                if j == i:
                    continue
                dx = pts[j, 0] - pts[i, 0]
                dy = pts[j, 1] - pts[i, 1]
                dz = pts[j, 2] - pts[i, 2]
                dist = sqrt((dx * dx + dy * dy) + dz * dz)
                if not (dist > 1e-12 and dist <= w_max):
                    continue
                cp = -((nrm[i, 0] * dx + nrm[i, 1] * dy) + nrm[i, 2] * dz) / dist
                cq = ((nrm[j, 0] * dx + nrm[j, 1] * dy) + nrm[j, 2] * dz) / dist
                if not (cp >= cos_a and cq >= cos_a):
                    continue
                score = cp if cp < cq else cq
                # insertion into the descending top list, earlier j wins ties
                pos = n_cand
                while pos > 0 and cand_s[pos - 1] < score:
                    pos -= 1
                if pos >= max_partners:
                    continue
                m = n_cand if n_cand < max_partners else max_partners - 1
                while m > pos:
                    cand_s[m] = cand_s[m - 1]
                    cand_j[m] = cand_j[m - 1]
                    m -= 1
                cand_s[pos] = score
                cand_j[pos] = j
                if n_cand < max_partners:
                    n_cand += 1
            for s in range(n_cand):
                j = cand_j[s]
                dx = pts[j, 0] - pts[i, 0]
                dy = pts[j, 1] - pts[i, 1]
                dz = pts[j, 2] - pts[i, 2]
                dist = sqrt((dx * dx + dy * dy) + dz * dz)
                b[0] = dx / dist
                b[1] = dy / dist
                b[2] = dz / dist
                _perp_basis(b, e1, e2)
                hw = 0.5 * dist
                found = 0
                best_clr = -1.0
                for k in range(n_approach):
                    theta = (2.0 * M_PI * k) / n_approach
                    for m in range(3):
                        a[m] = cos(theta) * e1[m] + sin(theta) * e2[m]
                    for m in range(3):
                        tt[m] = (pts[i, m] + hw * b[m]) - d0 * a[m]
                    # columns b, a x b, a
                    RR[0] = b[0]
                    RR[3] = b[1]
                    RR[6] = b[2]
                    RR[1] = a[1] * b[2] - a[2] * b[1]
                    RR[4] = a[2] * b[0] - a[0] * b[2]
                    RR[7] = a[0] * b[1] - a[1] * b[0]
                    RR[2] = a[0]
                    RR[5] = a[1]
                    RR[8] = a[2]
                    if _evaluate(pts, nrm, tt, RR, dist, d0, fl, rc, clear, foff, cos_a, &clr):
                        if clr > best_clr:
                            best_clr = clr
                            found = 1
                            for m in range(3):
                                best_a[m] = a[m]
                if found:
                    gs_v[i] = 1
                    for m in range(3):
                        b_v[i, m] = b[m]
                        a_v[i, m] = best_a[m]
                    w_v[i] = dist
                    c_v[i] = best_clr
                    break
    return gs, b_out, a_out, w_out, c_out


def adam_update(double[::1] w, const double[::1] g, double[::1] m, double[::1] v,
                double step, double b1, double b2, double inv_sqrt_c2, double eps):
    """Fused in-place Adam step on flat arrays (same operation order as the numpy path)."""
    cdef Py_ssize_t i, n = w.shape[0]
    cdef double gi, mi, vi
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = m[i] * b1 + (1.0 - b1) * gi
            vi = v[i] * b2 + (gi * gi) * (1.0 - b2)
            m[i] = mi
            v[i] = vi
            w[i] = w[i] - (mi / (sqrt(vi) * inv_sqrt_c2 + eps)) * step
