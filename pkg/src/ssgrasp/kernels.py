"""Backend selection for the hot loops.

The compiled ``_ckernels`` extension is used when importable; otherwise (or
with ``SSGRASP_PURE=1`` in the environment) the numpy implementations in
``_pykernels`` take over. Both expose the same functions.
"""

import logging
import os

import numpy as np

from . import _pykernels

log = logging.getLogger(__name__)

_impl = _pykernels
BACKEND = "python"
if not os.environ.get("SSGRASP_PURE"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        log.debug("compiled kernels unavailable, using numpy fallback")


def get_backend(name=None):
    """Kernel module by name ('cython' or 'python'); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _c64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def nearest(P, Q):
    """Nearest row of ``Q`` for every row of ``P``: ``(index, squared distance)``."""
    return _impl.nearest(_c64(P), _c64(Q))


def local_peaks(H, window, tau):
    return _impl.local_peaks(_c64(H), int(window), float(tau))


def evaluate_grasps(pts, nrm, t, R, width, d0, fl, rc, clear, foff, cos_a):
    return _impl.evaluate_grasps(
        _c64(pts), _c64(nrm), _c64(t).reshape(-1, 3), _c64(R).reshape(-1, 3, 3),
        _c64(width).reshape(-1), float(d0), float(fl), float(rc), float(clear),
        float(foff), float(cos_a),
    )


def label_points(pts, nrm, w_max, d0, fl, rc, clear, foff, cos_a, n_approach, max_partners):
    return _impl.label_points(
        _c64(pts), _c64(nrm), float(w_max), float(d0), float(fl), float(rc),
        float(clear), float(foff), float(cos_a), int(n_approach), int(max_partners),
    )


def adam_update(w, g, m, v, step, b1, b2, inv_sqrt_c2, eps):
    """In-place Adam step; all arrays must be flat, C-contiguous float64."""
    _impl.adam_update(w, g, m, v, float(step), float(b1), float(b2), float(inv_sqrt_c2),
                      float(eps))
