"""Compare the compiled and numpy kernel backends on representative inputs.

Usage: python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import statistics
import time

import numpy as np

from ssgrasp import kernels
from ssgrasp.grasp_core import GripperSpec, grasp_poses_batch
from ssgrasp.labeler import LabelParams, label_dense_grasps
from ssgrasp.shapes import make_canonical_shape


def _time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases():
    spec, lp = GripperSpec(), LabelParams()
    rng = np.random.default_rng(0)
    cloud = make_canonical_shape("can", n_points=1024, seed=0)
    pts, nrm = cloud.points * 0.1, cloud.normals
    small = make_canonical_shape("bottle", n_points=256, seed=0)
    lab = label_dense_grasps(cloud, 0.1, spec, lp)
    idx = lab.positive[:500]
    t, R = grasp_poses_batch(pts[idx], lab.approach[idx], lab.baseline[idx], lab.width[idx], spec)
    H = rng.random((60, 80))
    Q = rng.normal(size=(1024, 3))
    n_w = 512 * 5120
    w, g = rng.normal(size=n_w), rng.normal(size=n_w)

    def adam(mod):
        m, v = np.zeros(n_w), np.zeros(n_w)
        return lambda: mod.adam_update(w.copy(), g, m, v, 1e-3, 0.9, 0.999, 1.0, 1e-8)

    return {
        "nearest 1024x1024": lambda mod: (lambda: mod.nearest(pts, Q)),
        "local_peaks 60x80": lambda mod: (lambda: mod.local_peaks(H, 3, 0.3)),
        "evaluate_grasps 500 poses": lambda mod: (lambda: mod.evaluate_grasps(
            pts, nrm, t, R, lab.width[idx], spec.d0, spec.finger_len, lp.contact_radius,
            lp.clearance, lp.finger_offset, lp.cos_friction)),
        "label_points N=256": lambda mod: (lambda: mod.label_points(
            small.points * 0.1, small.normals, spec.w_max, spec.d0, spec.finger_len,
            lp.contact_radius, lp.clearance, lp.finger_offset, lp.cos_friction,
            lp.n_approach, lp.max_partners)),
        "adam_update 2.6M": adam,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args()
    try:
        backends = {"cython": kernels.get_backend("cython")}
    except ImportError:
        backends = {}
        print("compiled backend not built; timing numpy only")
    backends["python"] = kernels.get_backend("python")
    rows = []
    print(f"{'kernel':28s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name, make in cases().items():
        times = {b: _time(make(mod), args.repeat) for b, mod in backends.items()}
        sp = times["python"] / times["cython"] if "cython" in times else float("nan")
        rows.append({"kernel": name, **{f"{b}_s": v for b, v in times.items()}, "speedup": sp})
        print(f"{name:28s} " + " ".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
              + f"   {sp:6.1f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=1)


if __name__ == "__main__":
    main()
