"""Pure-Python/numpy versions of the compiled kernels.

Used when the extension is not built or ``AMERPUT_PURE_PYTHON=1``.
"""

import numpy as np
from scipy.linalg import solve_banded


def thomas(lower, diag, upper, rhs):
    n = len(diag)
    if n == 0:
        return np.empty(0)
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


def lcp_residual(indptr, indices, data, f, g, w):
    worst = 0.0
    for i in range(len(f)):
        s = f[i]
        for p in range(indptr[i], indptr[i + 1]):
            s -= data[p] * w[indices[p]]
        r = abs(max(s, g[i] - w[i]))
        if r > worst:
            worst = r
    return worst


def psor(indptr, indices, data, f, g, w, omega, tol, max_sweeps):
    n = len(f)
    # plain lists are much faster than numpy scalars in the sweep loop
    ip = indptr.tolist()
    ix = indices.tolist()
    dv = data.tolist()
    fl = f.tolist()
    gl = g.tolist()
    wl = w.tolist()
    res = lcp_residual(ip, ix, dv, fl, gl, wl)
    sweep = 0
    while res > tol and sweep < max_sweeps:
        for i in range(n):
            s = fl[i]
            diag = 0.0
            for p in range(ip[i], ip[i + 1]):
                c = ix[p]
                if c == i:
                    diag += dv[p]
                else:
                    s -= dv[p] * wl[c]
            v = wl[i] + omega * (s / diag - wl[i])
            wl[i] = v if v > gl[i] else gl[i]
        sweep += 1
        res = lcp_residual(ip, ix, dv, fl, gl, wl)
    w[:] = wl
    return sweep, res
