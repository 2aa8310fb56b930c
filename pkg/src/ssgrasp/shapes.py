"""Parametric stand-ins for household object categories.

Every shape is a union of analytic surface patches. Points are placed on a
rank-1 (golden ratio) lattice in each patch's area-preserving parameter
square, with a small seeded jitter, so clouds are evenly spread and nearly
a smooth function of the shape parameters. After sampling, the cloud is
moved to unit-canonical form: bounding-box center at the origin, bounding-box
diagonal of length 1, up-axis +y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import InvalidShapeParams

CATEGORIES = ("bottle", "bowl", "can", "mug", "laptop", "camera")
PRIMITIVES = ("sphere", "box", "cylinder")
SYMMETRIC_CATEGORIES = ("bottle", "bowl", "can")

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# (low, high) for every shape parameter; only ratios matter after normalization
PARAM_RANGES = {
    "bottle": {
        "body_radius": (0.25, 0.40),
        "body_height": (0.90, 1.30),
        "neck_radius": (0.07, 0.13),
        "neck_height": (0.10, 0.22),
    },
    "bowl": {"radius": (1.0, 1.0), "depth_ratio": (0.55, 1.0), "thickness": (0.05, 0.12)},
    "can": {"radius": (0.25, 0.55), "height": (0.80, 1.40)},
    "mug": {
        "radius": (0.30, 0.45),
        "height": (0.70, 1.00),
        "thickness": (0.03, 0.06),
        "handle_radius": (0.18, 0.28),
        "handle_thickness": (0.03, 0.06),
    },
    "laptop": {
        "depth": (0.60, 0.80),
        "thickness": (0.02, 0.05),
        "open_angle_deg": (70.0, 130.0),
    },
    "camera": {
        "height": (0.55, 0.80),
        "depth": (0.30, 0.50),
        "lens_radius": (0.14, 0.24),
        "lens_length": (0.12, 0.35),
    },
    "sphere": {"radius": (1.0, 1.0)},
    "box": {"size_x": (0.2, 2.0), "size_y": (0.2, 2.0), "size_z": (0.2, 2.0)},
    "cylinder": {"radius": (0.05, 2.0), "height": (0.05, 4.0)},
}


@dataclass
class UnitCanonicalCloud:
    category: str
    points: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.points)

    def scaled(self, scale: float) -> np.ndarray:
        return self.points * scale

    @property
    def extents(self) -> np.ndarray:
        return self.points.max(axis=0) - self.points.min(axis=0)


@dataclass
class _Patch:
    area: float
    sample: object  # (u, v) -> (points, normals)
    reject: object = None  # points -> bool mask of points to drop


def default_params(category):
    return {k: 0.5 * (lo + hi) for k, (lo, hi) in _ranges(category).items()}


def sample_shape_params(category, rng):
    ranges = _ranges(category)
    return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in ranges.items()}


def _ranges(category):
    try:
        return PARAM_RANGES[category]
    except KeyError:
        raise InvalidShapeParams(f"unknown category {category!r}") from None


def validate_params(category, params):
    ranges = _ranges(category)
    unknown = set(params) - set(ranges)
    if unknown:
        raise InvalidShapeParams(f"{category}: unknown parameters {sorted(unknown)}")
    p = {**default_params(category), **params}
    for k, (lo, hi) in ranges.items():
        v = p[k]
        if not (np.isfinite(v) and lo - 1e-12 <= v <= hi + 1e-12):
            raise InvalidShapeParams(f"{category}.{k}={v} outside [{lo}, {hi}]")
    if category == "bottle" and not p["neck_radius"] < p["body_radius"]:
        raise InvalidShapeParams("bottle neck_radius must be smaller than body_radius")
    if category == "mug" and not p["thickness"] < p["radius"]:
        raise InvalidShapeParams("mug thickness must be smaller than radius")
    if category == "bowl" and not p["thickness"] < p["radius"] * p["depth_ratio"]:
        raise InvalidShapeParams("bowl thickness must be smaller than its depth")
    return p


# ---------------------------------------------------------------- patches

def _cyl_lateral(r, y0, y1, inward=False):
    def f(u, v):
        th = 2 * np.pi * v
        c, s = np.cos(th), np.sin(th)
        pts = np.stack([r * c, y0 + u * (y1 - y0), r * s], axis=1)
        n = np.stack([c, np.zeros_like(c), s], axis=1)
        return pts, -n if inward else n

    return _Patch(2 * np.pi * r * (y1 - y0), f)


def _disk(r_in, r_out, y, up=True):
    def f(u, v):
        rho = np.sqrt(r_in ** 2 + u * (r_out ** 2 - r_in ** 2))
        th = 2 * np.pi * v
        pts = np.stack([rho * np.cos(th), np.full_like(u, y), rho * np.sin(th)], axis=1)
        n = np.zeros_like(pts)
        n[:, 1] = 1.0 if up else -1.0
        return pts, n

    return _Patch(np.pi * (r_out ** 2 - r_in ** 2), f)


def _ellipsoid_cap(R, k, y_top=0.0, inward=False, lower=True, full=False):
    """Surface x^2/R^2 + (y-y_top)^2/(kR)^2 + z^2/R^2 = 1, lower half (or full)."""

    def f(u, v):
        ys = 1 - 2 * u if full else (-u if lower else u)
        rr = np.sqrt(np.clip(1 - ys * ys, 0, None))
        th = 2 * np.pi * v
        ux, uz = rr * np.cos(th), rr * np.sin(th)
        pts = np.stack([R * ux, y_top + k * R * ys, R * uz], axis=1)
        n = np.stack([ux, ys / k, uz], axis=1)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return pts, -n if inward else n

    p = 1.6075
    a, c = R, k * R
    area = 4 * np.pi * ((2 * (a * c) ** p + (a * a) ** p) / 3) ** (1 / p)
    return _Patch(area if full else area / 2, f)


def _rect(center, e1, e2, l1, l2, normal, reject=None):
    center, e1, e2, normal = (np.asarray(x, dtype=float) for x in (center, e1, e2, normal))

    def f(u, v):
        pts = center + (u[:, None] - 0.5) * l1 * e1 + (v[:, None] - 0.5) * l2 * e2
        return pts, np.broadcast_to(normal, pts.shape).copy()

    return _Patch(l1 * l2, f, reject)


def _box(size, center=(0, 0, 0), rot=None, skip=(), reject=None):
    sx, sy, sz = size
    c = np.asarray(center, dtype=float)
    Rm = np.eye(3) if rot is None else np.asarray(rot)
    ex, ey, ez = Rm[:, 0], Rm[:, 1], Rm[:, 2]
    faces = {
        "+x": (c + ex * sx / 2, ey, ez, sy, sz, ex),
        "-x": (c - ex * sx / 2, ey, ez, sy, sz, -ex),
        "+y": (c + ey * sy / 2, ex, ez, sx, sz, ey),
        "-y": (c - ey * sy / 2, ex, ez, sx, sz, -ey),
        "+z": (c + ez * sz / 2, ex, ey, sx, sy, ez),
        "-z": (c - ez * sz / 2, ex, ey, sx, sy, -ez),
    }
    return [
        _rect(*spec, reject=(reject or {}).get(name))
        for name, spec in faces.items()
        if name not in skip
    ]


def _torus_arc(center, Rt, rt, phi0, phi1, reject=None):
    center = np.asarray(center, dtype=float)
    grid = np.linspace(0.0, 2 * np.pi, 4097)
    cdf = (Rt * grid + rt * np.sin(grid)) / (2 * np.pi * Rt)

    def f(u, v):
        phi = phi0 + u * (phi1 - phi0)
        psi = np.interp(v, cdf, grid)
        cp, sp = np.cos(phi), np.sin(phi)
        cs, ss = np.cos(psi), np.sin(psi)
        ring = Rt + rt * cs
        pts = center + np.stack([ring * cp, ring * sp, rt * ss], axis=1)
        n = np.stack([cs * cp, cs * sp, ss], axis=1)
        return pts, n

    return _Patch((phi1 - phi0) * Rt * 2 * np.pi * rt, f, reject)


def _build_patches(category, p):
    if category == "can":
        r, h = p["radius"], p["height"]
        return [_cyl_lateral(r, 0, h), _disk(0, r, 0, up=False), _disk(0, r, h)]
    if category == "bottle":
        rb, hb, rn, hn = p["body_radius"], p["body_height"], p["neck_radius"], p["neck_height"]
        return [
            _cyl_lateral(rb, 0, hb),
            _disk(0, rb, 0, up=False),
            _disk(rn, rb, hb),
            _cyl_lateral(rn, hb, hb + hn),
            _disk(0, rn, hb + hn),
        ]
    if category == "bowl":
        R, k, th = p["radius"], p["depth_ratio"], p["thickness"]
        Ri = R - th
        ki = (k * R - th) / Ri
        return [
            _ellipsoid_cap(R, k),
            _ellipsoid_cap(Ri, ki, inward=True),
            _disk(Ri, R, 0.0),
        ]
    if category == "mug":
        r, h, th = p["radius"], p["height"], p["thickness"]
        ri = r - th

        def outside_body(x):
            return np.hypot(x[:, 0], x[:, 2]) < r

        return [
            _cyl_lateral(r, 0, h),
            _cyl_lateral(ri, th, h, inward=True),
            _disk(0, r, 0, up=False),
            _disk(0, ri, th),
            _disk(ri, r, h),
            _torus_arc((r, h / 2, 0), p["handle_radius"], p["handle_thickness"],
                       -np.pi / 2, np.pi / 2, reject=outside_body),
        ]
    if category == "laptop":
        W, D, T = 1.0, p["depth"], p["thickness"]
        base = _box((W, T, D), center=(0, T / 2, 0))
        th = np.radians(p["open_angle_deg"])
        # lid rotates about the x-axis through the base's top-back edge
        c, s = np.cos(th), np.sin(th)
        rot = np.array([[1, 0, 0], [0, c, s], [0, -s, c]])
        hinge = np.array([0, T, -D / 2])
        lid_center = hinge + rot @ np.array([0, T / 2, D / 2])
        return base + _box((W, T, D), center=lid_center, rot=rot)
    if category == "camera":
        W, H, D = 1.0, p["height"], p["depth"]
        rl, L = p["lens_radius"], p["lens_length"]

        def under_lens(x):
            return np.hypot(x[:, 0], x[:, 1]) < rl

        patches = _box((W, H, D), reject={"+z": under_lens})

        def lens(u, v):
            th = 2 * np.pi * v
            c, s = np.cos(th), np.sin(th)
            pts = np.stack([rl * c, rl * s, D / 2 + u * L], axis=1)
            return pts, np.stack([c, s, np.zeros_like(c)], axis=1)

        patches.append(_Patch(2 * np.pi * rl * L, lens))
        patches.append(_rect((0, 0, D / 2 + L), (1, 0, 0), (0, 1, 0), 2 * rl, 2 * rl, (0, 0, 1),
                             reject=lambda x: np.hypot(x[:, 0], x[:, 1]) > rl))
        return patches
    if category == "sphere":
        return [_ellipsoid_cap(p["radius"], 1.0, full=True)]
    if category == "box":
        return _box((p["size_x"], p["size_y"], p["size_z"]))
    if category == "cylinder":
        r, h = p["radius"], p["height"]
        return [_cyl_lateral(r, 0, h), _disk(0, r, 0, up=False), _disk(0, r, h)]
    raise InvalidShapeParams(f"unknown category {category!r}")


def _lattice(n, offset, jitter, rng):
    i = np.arange(n)
    u = (i + 0.5) / n
    v = np.mod(offset + i * _GOLDEN, 1.0)
    if jitter > 0:
        cell = 1.0 / math.sqrt(max(n, 1))
        u = u + rng.uniform(-0.5, 0.5, n) * jitter / n
        v = np.mod(v + rng.uniform(-0.5, 0.5, n) * jitter * cell, 1.0)
    return np.clip(u, 0.0, 1.0), v


def _allocate(weights, n):
    w = np.asarray(weights, dtype=float)
    raw = n * w / w.sum()
    counts = np.floor(raw).astype(int)
    rest = n - counts.sum()
    order = np.lexsort((np.arange(len(w)), -(raw - counts)))
    counts[order[:rest]] += 1
    return counts


def _visible_fraction(patch):
    if patch.reject is None:
        return 1.0
    u, v = _lattice(1024, 0.0, 0.0, None)
    pts, _ = patch.sample(u, v)
    return max(1.0 - patch.reject(pts).mean(), 1e-3)


def _sample_patch(patch, k, rng, jitter):
    if k == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    if patch.reject is None:
        u, v = _lattice(k, 0.0, jitter, rng)
        return patch.sample(u, v)
    m = int(math.ceil(k / _visible_fraction(patch))) + 2
    while True:
        u, v = _lattice(m, 0.0, jitter, rng)
        pts, nrm = patch.sample(u, v)
        keep = ~patch.reject(pts)
        if keep.sum() >= k:
            idx = np.nonzero(keep)[0]
            sel = idx[np.round(np.linspace(0, len(idx) - 1, k)).astype(int)]
            return pts[sel], nrm[sel]
        m = int(m * 1.25) + 4


def make_canonical_shape(category, shape_params=None, n_points=1024, seed=0, jitter=0.2):
    """Sample a unit-canonical cloud with outward unit normals.

    ``jitter`` is the lattice perturbation as a fraction of one lattice cell.
    """
    if n_points < 64:
        raise InvalidShapeParams(f"n_points must be >= 64, got {n_points}")
    p = validate_params(category, shape_params or {})
    rng = np.random.default_rng(seed)
    patches = _build_patches(category, p)
    weights = [pt.area * _visible_fraction(pt) for pt in patches]
    counts = _allocate(weights, n_points)
    pts, nrm = zip(*(_sample_patch(pt, k, rng, jitter) for pt, k in zip(patches, counts)))
    pts = np.concatenate(pts)
    nrm = np.concatenate(nrm)
    nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    return normalize_cloud(UnitCanonicalCloud(category, pts, nrm))


def normalize_cloud(cloud: UnitCanonicalCloud) -> UnitCanonicalCloud:
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    diag = np.linalg.norm(hi - lo)
    pts = (cloud.points - 0.5 * (lo + hi)) / diag
    # re-center exactly after the division
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pts = pts - 0.5 * (lo + hi)
    return UnitCanonicalCloud(cloud.category, pts, cloud.normals.copy())


def body_diameter(category, params):
    """Widest horizontal extent of the main body, in unit-canonical units."""
    p = validate_params(category, params)
    pts = np.concatenate([pt.sample(*_lattice(256, 0.0, 0.0, None))[0]
                          for pt in _build_patches(category, p)])
    diag = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
    if category == "bottle":
        return 2 * p["body_radius"] / diag
    if category in ("can", "cylinder"):
        return 2 * p["radius"] / diag
    if category == "bowl":
        return 2 * p["radius"] / diag
    ext = pts.max(axis=0) - pts.min(axis=0)
    return min(ext[0], ext[2]) / diag


# ---------------------------------------------------------------- scales

@dataclass(frozen=True)
class ScaleDistribution:
    """Log-normal over the metric bounding-box diagonal, truncated to [low, high]."""

    category: str
    mu: float
    sigma: float
    low: float = 0.05
    high: float = 0.8

    def __post_init__(self):
        if not (0 < self.low < self.high):
            raise ValueError("need 0 < low < high")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def mean(self) -> float:
        if self.sigma == 0:
            return float(np.clip(math.exp(self.mu), self.low, self.high))
        nd = NormalDist()
        a = (math.log(self.low) - self.mu) / self.sigma
        b = (math.log(self.high) - self.mu) / self.sigma
        z = nd.cdf(b) - nd.cdf(a)
        return math.exp(self.mu + self.sigma ** 2 / 2) * (
            nd.cdf(b - self.sigma) - nd.cdf(a - self.sigma)
        ) / z


DEFAULT_SCALE_MU = {
    "bottle": math.log(0.25),
    "bowl": math.log(0.18),
    "can": math.log(0.12),
    "mug": math.log(0.15),
    "laptop": math.log(0.45),
    "camera": math.log(0.15),
}


def default_scale_distribution(category, sigma=0.25, low=0.05, high=0.8):
    mu = DEFAULT_SCALE_MU.get(category, math.log(0.15))
    return ScaleDistribution(category, mu, sigma, low, high)


def sample_scales(dist: ScaleDistribution, count: int, seed=0):
    if count < 1:
        raise ValueError("count must be >= 1")
    if dist.sigma == 0:
        return [float(np.clip(math.exp(dist.mu), dist.low, dist.high))] * count
    rng = np.random.default_rng(seed)
    nd = NormalDist()
    a = nd.cdf((math.log(dist.low) - dist.mu) / dist.sigma)
    b = nd.cdf((math.log(dist.high) - dist.mu) / dist.sigma)
    u = rng.uniform(a, b, count)
    out = []
    for ui in u:
        ui = min(max(ui, 1e-300), 1 - 1e-16)
        x = math.exp(dist.mu + dist.sigma * nd.inv_cdf(ui))
        out.append(min(max(x, dist.low), dist.high))
    return out
