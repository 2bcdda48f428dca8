# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the per-level complementarity solves.

Same signatures and results as :mod:`amerput._pykernels`.
"""

import numpy as np

from libc.math cimport fabs


def thomas(const double[::1] lower, const double[::1] diag,
           const double[::1] upper, const double[::1] rhs):
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[n-1]`` are ignored."""
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef double m
    out = np.empty(n)
    cdef double[::1] x = out
    cdef double[::1] c = np.empty(n)
    if n == 0:
        return out
    c[0] = upper[0] / diag[0] if n > 1 else 0.0
    x[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * c[i - 1]
        if i < n - 1:
            c[i] = upper[i] / m
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / m
    for i in range(n - 2, -1, -1):
        x[i] -= c[i] * x[i + 1]
    return out


cdef double _residual(const long[::1] indptr, const long[::1] indices,
                      const double[::1] data, const double[::1] f,
                      const double[::1] g, const double[::1] w) nogil:
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t i, p
    cdef double s, q, r, worst = 0.0
    for i in range(n):
        s = f[i]
        for p in range(indptr[i], indptr[i + 1]):
            s -= data[p] * w[indices[p]]
        q = g[i] - w[i]
        r = s if s > q else q
        r = fabs(r)
        if r > worst:
            worst = r
    return worst


def lcp_residual(const long[::1] indptr, const long[::1] indices,
                 const double[::1] data, const double[::1] f,
                 const double[::1] g, const double[::1] w):
    """``max_i |max(f - B w, g - w)_i|`` for ``B`` in CSR form."""
    return _residual(indptr, indices, data, f, g, w)


def psor(const long[::1] indptr, const long[::1] indices, const double[::1] data,
         const double[::1] f, const double[::1] g, double[::1] w,
         double omega, double tol, long max_sweeps):
    """Projected SOR for ``max(f - B w, g - w) = 0``, updating ``w`` in place.

    Rows are swept in index order.  Returns ``(sweeps, residual)``.
    """
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t i, p
    cdef long sweep = 0
    cdef double s, diag, gs, v
    cdef double res = _residual(indptr, indices, data, f, g, w)
    with nogil:
        while res > tol and sweep < max_sweeps:
            for i in range(n):
                s = f[i]
                diag = 0.0
                for p in range(indptr[i], indptr[i + 1]):
                    if indices[p] == i:
                        diag = diag + data[p]
                    else:
                        s -= data[p] * w[indices[p]]
                gs = s / diag
                v = w[i] + omega * (gs - w[i])
                w[i] = v if v > g[i] else g[i]
            sweep += 1
            res = _residual(indptr, indices, data, f, g, w)
    return sweep, res
