"""Kernel backend selection.

The compiled extension is used when it imports and the environment
variable ``AMERPUT_PURE_PYTHON`` is not set to a true value.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("AMERPUT_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    else:
        _impl = _compiled
        BACKEND = "cython"
else:
    _compiled = None


def backends():
    """Available kernel modules keyed by name."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def _csr_arrays(B):
    return (
        np.ascontiguousarray(B.indptr, dtype=np.int64),
        np.ascontiguousarray(B.indices, dtype=np.int64),
        np.ascontiguousarray(B.data, dtype=np.float64),
    )


def thomas(lower, diag, upper, rhs, impl=None):
    impl = impl or _impl
    return impl.thomas(
        np.ascontiguousarray(lower, dtype=np.float64),
        np.ascontiguousarray(diag, dtype=np.float64),
        np.ascontiguousarray(upper, dtype=np.float64),
        np.ascontiguousarray(rhs, dtype=np.float64),
    )


def lcp_residual(B, f, g, w, impl=None):
    impl = impl or _impl
    ip, ix, dv = _csr_arrays(B)
    return float(
        impl.lcp_residual(
            ip, ix, dv,
            np.ascontiguousarray(f, dtype=np.float64),
            np.ascontiguousarray(g, dtype=np.float64),
            np.ascontiguousarray(w, dtype=np.float64),
        )
    )


def psor(B, f, g, w0, omega, tol, max_sweeps, impl=None):
    """Projected SOR on ``max(f - B w, g - w) = 0``; returns ``(w, sweeps, residual)``."""
    impl = impl or _impl
    ip, ix, dv = _csr_arrays(B)
    g = np.ascontiguousarray(g, dtype=np.float64)
    w = np.maximum(np.asarray(w0, dtype=np.float64), g).copy()
    sweeps, res = impl.psor(
        ip, ix, dv, np.ascontiguousarray(f, dtype=np.float64), g, w,
        float(omega), float(tol), int(max_sweeps),
    )
    return w, int(sweeps), float(res)
