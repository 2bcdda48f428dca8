"""Finite-difference operators and the discrete generator ``L_h``.

The pointwise operators accept any callable ``f(t, x)`` (including a
:class:`~amerput.lattice.GridFunction`), mirroring the fact that the
differences are defined at every point of space-time and only later
restricted to a lattice.  The ``*_level`` variants work on arrays of
lattice values and are what the solver and the residual check use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .lattice import Lattice
from .stencil import StencilDecomposition

__all__ = [
    "delta_time",
    "delta_dir",
    "second_dir",
    "apply_Lh",
    "apply_Lh_level",
    "delta_time_level",
    "LevelOperator",
    "assemble_level",
    "level_coefficients",
    "check_monotone",
]


def _value(f, t, x):
    return float(np.asarray(f(t, x)).reshape(-1)[0])


def delta_time(f, t, x, tau, T):
    """``(f(t + min(tau, T - t), x) - f(t, x)) / tau``.

    The divisor stays ``tau`` on the shortened final step.
    """
    if t >= T:
        raise ValueError("delta_time is undefined on the terminal level t = T")
    step = min(tau, T - t)
    return (_value(f, min(t + step, T), x) - _value(f, t, x)) / tau


def delta_dir(f, t, x, ell, h):
    x = np.asarray(x, dtype=float)
    ell = np.asarray(ell, dtype=float)
    return (_value(f, t, x + h * ell) - _value(f, t, x)) / h


def second_dir(f, t, x, ell, h):
    x = np.asarray(x, dtype=float)
    ell = np.asarray(ell, dtype=float)
    return (_value(f, t, x + h * ell) + _value(f, t, x - h * ell) - 2.0 * _value(f, t, x)) / (h * h)


def apply_Lh(dec: StencilDecomposition, rho, f, t, x, h):
    """``sum_k (a_k Delta_{h,l_k} f + b_k delta_{h,l_k} f) - rho f`` at ``(t, x)``.

    Coefficients are frozen at ``(t, x)``.
    """
    x = np.asarray(x, dtype=float).reshape(dec.d)
    a, b = dec.coefficients(t, x)
    total = 0.0
    for c, ell in enumerate(dec.directions):
        total += a[0, c] * second_dir(f, t, x, ell, h) + b[0, c] * delta_dir(f, t, x, ell, h)
    r = float(np.asarray(rho(t, x.reshape(1, -1))).reshape(-1)[0])
    return total - r * _value(f, t, x)


def level_coefficients(dec: StencilDecomposition, rho, lattice: Lattice, j):
    """``(a, b, rho)`` at the interior nodes of level ``j``."""
    t = lattice.time(j)
    X = lattice.coords[lattice.interior]
    a, b = dec.coefficients(t, X)
    r = np.asarray(rho(t, X), dtype=float).reshape(-1)
    return a, b, r


def apply_Lh_level(dec: StencilDecomposition, rho, lattice: Lattice, j, level_values, coeffs=None):
    """``L_h`` applied to one level of lattice values, at its interior nodes.

    Works directly from the neighbour table; it never touches the
    assembled matrix, so it doubles as an independent check on it.
    """
    v = np.asarray(level_values, dtype=float)
    a, b, r = coeffs if coeffs is not None else level_coefficients(dec, rho, lattice, j)
    h = lattice.h
    centre = v[lattice.interior]
    nb = v[lattice.neighbors]
    d1 = dec.d1
    # column c and column c +- d1 hold l_k and -l_k
    opposite = np.concatenate([np.arange(d1, 2 * d1), np.arange(0, d1)])
    second = (nb + nb[:, opposite] - 2.0 * centre[:, None]) / (h * h)
    first = (nb - centre[:, None]) / h
    return np.sum(a * second + b * first, axis=1) - r * centre


def delta_time_level(lattice: Lattice, values, j):
    """Time difference at the interior nodes of level ``j`` (divisor ``tau``)."""
    if j >= lattice.n_levels - 1:
        raise ValueError("delta_time is undefined on the terminal level")
    v = np.asarray(values)
    return (v[j + 1, lattice.interior] - v[j, lattice.interior]) / lattice.tau


@dataclass(frozen=True)
class LevelOperator:
    """``L_h`` on the interior nodes of one level in assembled form.

    ``matrix`` acts on interior values; ``boundary_matrix`` maps a full
    level vector onto the contribution of its boundary nodes (columns of
    interior nodes are empty).  ``boundary_contribution`` is that product
    for the boundary values the operator was assembled with.
    """

    matrix: sp.csr_matrix
    boundary_matrix: sp.csr_matrix
    boundary_contribution: np.ndarray

    def apply(self, interior_values):
        return self.matrix @ interior_values + self.boundary_contribution

    def with_boundary(self, level_values):
        return LevelOperator(
            self.matrix,
            self.boundary_matrix,
            self.boundary_matrix @ np.asarray(level_values, dtype=float),
        )


def assemble_level(dec: StencilDecomposition, rho, lattice: Lattice, j, boundary_values=None, coeffs=None):
    """Assemble ``L_h`` for level ``j``.

    Neighbour ``x + h l_c`` receives ``2 a_c / h^2 + b_c / h`` (the
    ``a``-term arrives once from ``k = c`` and once from ``k = -c``); the
    diagonal is ``-sum_c (2 a_c / h^2 + b_c / h) - rho``.  Entries for
    repeated neighbours are summed.
    """
    if j >= lattice.n_levels - 1:
        raise ValueError("no operator on the terminal level")
    a, b, r = coeffs if coeffs is not None else level_coefficients(dec, rho, lattice, j)
    h = lattice.h
    n_int = lattice.n_interior
    w = 2.0 * a / (h * h) + b / h
    rows = np.repeat(np.arange(n_int), w.shape[1])
    cols_enum = lattice.neighbors.ravel()
    vals = w.ravel()
    target = lattice.interior_position[cols_enum]
    inside = target >= 0

    diag = -np.sum(w, axis=1) - r
    mat = sp.coo_matrix(
        (
            np.concatenate([vals[inside], diag]),
            (np.concatenate([rows[inside], np.arange(n_int)]), np.concatenate([target[inside], np.arange(n_int)])),
        ),
        shape=(n_int, n_int),
    ).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    bmat = sp.coo_matrix(
        (vals[~inside], (rows[~inside], cols_enum[~inside])),
        shape=(n_int, lattice.n_spatial),
    ).tocsr()
    bmat.sum_duplicates()
    bmat.eliminate_zeros()
    if boundary_values is None:
        contribution = np.zeros(n_int)
    else:
        contribution = bmat @ np.asarray(boundary_values, dtype=float)
    return LevelOperator(mat, bmat, contribution)


def check_monotone(op: LevelOperator, rho_nonnegative=True):
    """Sign structure of an assembled operator.

    Returns the smallest off-diagonal entry (interior and boundary
    couplings), the largest diagonal entry and the largest row sum
    including boundary columns; a monotone operator has the first
    nonnegative and the other two nonpositive.
    """
    m = op.matrix.tocoo()
    off = m.data[m.row != m.col]
    diag = op.matrix.diagonal()
    bdata = op.boundary_matrix.data
    min_off = min(off.min(initial=np.inf), bdata.min(initial=np.inf))
    row_sums = np.asarray(op.matrix.sum(axis=1)).ravel() + np.asarray(op.boundary_matrix.sum(axis=1)).ravel()
    out = {
        "min_offdiag": float(min_off) if np.isfinite(min_off) else 0.0,
        "max_diag": float(diag.max(initial=-np.inf)),
        "max_row_sum": float(row_sums.max(initial=-np.inf)),
    }
    out["ok"] = bool(
        out["min_offdiag"] >= 0
        and out["max_diag"] <= 0
        and (not rho_nonnegative or out["max_row_sum"] <= 1e-12 * max(1.0, abs(diag).max(initial=1.0)))
    )
    return out
